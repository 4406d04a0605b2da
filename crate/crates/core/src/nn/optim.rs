use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, ParamStore, Tensor};

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip)]
    m: Vec<Vec<f64>>,
    #[serde(skip)]
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moment(&self, i: usize) -> Option<&[f64]> {
        self.m.get(i).map(Vec::as_slice)
    }

    pub fn second_moment(&self, i: usize) -> Option<&[f64]> {
        self.v.get(i).map(Vec::as_slice)
    }

    /// Applies one update. Parameters absent from `grads` see a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), NnError> {
        let mut dense: Vec<Option<&Tensor>> = vec![None; store.len()];
        for (id, g) in &grads.0 {
            if g.shape() != store.get(*id).shape() {
                return Err(NnError::Shape(format!(
                    "gradient for {} has shape {:?}, parameter {:?}",
                    store.name(*id),
                    g.shape(),
                    store.get(*id).shape()
                )));
            }
            dense[id.0] = Some(g);
        }
        self.apply(store, |i| dense[i].map(Tensor::data))
    }

    /// Applies one update from the `grad` buffers accumulated on the store.
    pub fn step_accumulated(&mut self, store: &mut ParamStore) -> Result<(), NnError> {
        let grads: Vec<Option<Vec<f64>>> = store.ids().map(|id| store.get(id).grad.clone()).collect();
        for (id, g) in store.ids().zip(&grads) {
            if let Some(g) = g {
                if g.len() != store.get(id).len() {
                    return Err(NnError::Shape(format!("gradient buffer for {}", store.name(id))));
                }
            }
        }
        self.apply(store, |i| grads[i].as_deref())
    }

    fn apply<'a>(
        &mut self,
        store: &mut ParamStore,
        grad_of: impl Fn(usize) -> Option<&'a [f64]>,
    ) -> Result<(), NnError> {
        if self.m.is_empty() {
            self.m = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != store.len() {
            return Err(NnError::Shape("optimizer state does not match parameter set".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.0;
            let g = grad_of(i);
            let p = store.get_mut(id).data_mut();
            if self.m[i].len() != p.len() {
                return Err(NnError::Shape(format!("moment size for parameter {i}")));
            }
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * gj;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * gj * gj;
                let mhat = self.m[i][j] / bc1;
                let vhat = self.v[i][j] / bc2;
                p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamId;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::default();
        s.insert("p", Tensor::new(vec![values.len()], values.to_vec()).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = store_with(&[0.3, -1.2, 4.0]);
        let before = s.clone();
        let mut adam = AdamState::new(0.1);
        let g = Gradients(vec![(ParamId(0), Tensor::zeros(&[3]))]);
        for _ in 0..5 {
            adam.step(&mut s, &g).unwrap();
        }
        assert_eq!(s, before);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store_with(&[1.0]);
        let mut adam = AdamState::new(0.1);
        let g = Gradients(vec![(ParamId(0), Tensor::filled(&[1], 1.0))]);
        adam.step(&mut s, &g).unwrap();
        // m̂ = 1, v̂ = 1, so Δ = lr / (1 + eps).
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.get(ParamId(0)).data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut s = store_with(&[0.5, -0.25]);
            let mut adam = AdamState::new(0.01);
            for k in 0..20 {
                let g = Tensor::new(vec![2], vec![(k as f64).sin(), (k as f64 * 0.3).cos()]).unwrap();
                adam.step(&mut s, &Gradients(vec![(ParamId(0), g)])).unwrap();
            }
            s.get(ParamId(0)).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_shape_mismatch_is_an_error() {
        let mut s = store_with(&[0.0, 0.0]);
        let g = Gradients(vec![(ParamId(0), Tensor::zeros(&[3]))]);
        assert!(AdamState::new(0.1).step(&mut s, &g).is_err());
    }

    #[test]
    fn accumulated_buffers_match_explicit_gradients() {
        let mut a = store_with(&[0.5, 2.0]);
        let mut b = a.clone();
        let g = Gradients(vec![(ParamId(0), Tensor::new(vec![2], vec![0.2, -0.7]).unwrap())]);
        AdamState::new(0.05).step(&mut a, &g).unwrap();
        b.accumulate_grads(&g);
        AdamState::new(0.05).step_accumulated(&mut b).unwrap();
        assert_eq!(a.get(ParamId(0)).data(), b.get(ParamId(0)).data());
    }
}
