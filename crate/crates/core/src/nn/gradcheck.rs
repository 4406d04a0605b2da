//! Central finite-difference verification of tape gradients.

use super::{Gradients, Graph, NnError, ParamStore, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Upper bound on probed coordinates per parameter block; `None` probes
    /// every coordinate. Probes are spread evenly over the block.
    pub max_probes_per_block: Option<usize>,
    /// Smallest denominator in the relative error. Gradients that are zero
    /// by symmetry (e.g. attention key biases under softmax) would otherwise
    /// turn finite-difference roundoff into large relative errors.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            max_probes_per_block: None,
            floor: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub probes: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub blocks: Vec<BlockError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tol)
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Builds the scalar loss with `build`, back-propagates it and compares every
/// parameter block against central differences.
pub fn finite_difference_check<F>(
    mut build: F,
    params: &ParamStore,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&ParamStore) -> Result<(Graph, Var), NnError>,
{
    let (g, root) = build(params)?;
    let analytic = g.backward(root)?;
    drop(g);
    finite_difference_check_against(
        |p| {
            let (g, root) = build(p)?;
            Ok(g.value(root).data()[0])
        },
        &analytic,
        params,
        opts,
    )
}

/// Compares supplied gradients against central differences of `loss`.
pub fn finite_difference_check_against<F>(
    mut loss: F,
    analytic: &Gradients,
    params: &ParamStore,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&ParamStore) -> Result<f64, NnError>,
{
    let mut probe = params.clone();
    let mut blocks = Vec::with_capacity(params.len());
    for id in params.ids() {
        let n = params.get(id).len();
        let zero = vec![0.0; n];
        let grad = analytic.get(id).map_or(&zero[..], |t| t.data());
        let indices: Vec<usize> = match opts.max_probes_per_block {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &j in &indices {
            let orig = params.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + opts.h;
            let plus = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - opts.h;
            let minus = loss(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            worst = worst.max(relative_error(grad[j], numeric, opts.floor));
        }
        blocks.push(BlockError {
            name: params.name(id).to_string(),
            max_rel_error: worst,
            probes: indices.len(),
        });
    }
    Ok(GradCheckReport {
        tol: opts.tol,
        blocks,
    })
}
