use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::SpeakerError;

/// Rows of `components` are orthonormal; `eigenvalues` are covariance
/// eigenvalues (denominator `n - 1`), non-increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, SpeakerError> {
        if v.len() != self.mean.len() {
            return Err(SpeakerError::DimMismatch {
                expected: self.mean.len(),
                got: v.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(v).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>, SpeakerError> {
        if z.len() != self.components.len() {
            return Err(SpeakerError::DimMismatch {
                expected: self.components.len(),
                got: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (o, a) in out.iter_mut().zip(c) {
                *o += w * a;
            }
        }
        Ok(out)
    }
}

/// Fits the top-`k` principal components. When `n < d` the eigenproblem is
/// solved on the `n × n` Gram matrix instead of the `d × d` covariance.
pub fn pca_fit(vectors: &[Vec<f64>], k: usize) -> Result<PcaModel, SpeakerError> {
    let n = vectors.len();
    if n < 2 {
        return Err(SpeakerError::TooFew { needed: 2, got: n });
    }
    let d = vectors[0].len();
    for v in vectors {
        if v.len() != d {
            return Err(SpeakerError::DimMismatch { expected: d, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(SpeakerError::NonFinite("pca input".into()));
        }
    }
    let max = (n - 1).min(d);
    if k == 0 || k > max {
        return Err(SpeakerError::TooManyComponents { k, max });
    }

    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64)
        .collect();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    if x.iter().all(|&v| v == 0.0) {
        return Err(SpeakerError::Degenerate);
    }
    let denom = (n - 1) as f64;

    let (values, mut components): (Vec<f64>, Vec<DVector<f64>>) = if n < d {
        let eig = SymmetricEigen::new(&x * x.transpose());
        let order = descending(&eig.eigenvalues);
        let lambda_max = eig.eigenvalues[order[0]];
        let mut vals = Vec::with_capacity(k);
        let mut comps = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let lambda = eig.eigenvalues[i];
            vals.push((lambda / denom).max(0.0));
            if lambda > lambda_max * 1e-12 {
                comps.push(x.transpose() * eig.eigenvectors.column(i) / lambda.sqrt());
            } else {
                comps.push(DVector::zeros(d));
            }
        }
        (vals, comps)
    } else {
        let eig = SymmetricEigen::new(x.transpose() * &x / denom);
        let order = descending(&eig.eigenvalues);
        order
            .iter()
            .take(k)
            .map(|&i| (eig.eigenvalues[i].max(0.0), eig.eigenvectors.column(i).into_owned()))
            .unzip()
    };
    orthonormalise(&mut components);

    let components = components
        .into_iter()
        .map(|c| {
            let pivot = c.iter().fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            c.iter().map(|v| v * sign).collect()
        })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        eigenvalues: values,
    })
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Modified Gram-Schmidt; zero vectors (null directions) are completed from
/// the standard basis.
fn orthonormalise(vs: &mut [DVector<f64>]) {
    let d = vs.first().map_or(0, |v| v.len());
    let mut basis = 0;
    for i in 0..vs.len() {
        loop {
            let mut v = vs[i].clone();
            for j in 0..i {
                let p = vs[j].dot(&v);
                v -= &vs[j] * p;
            }
            let norm = v.norm();
            if norm > 1e-10 {
                vs[i] = v / norm;
                break;
            }
            vs[i] = DVector::from_fn(d, |r, _| if r == basis { 1.0 } else { 0.0 });
            basis += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_d_cloud_matches_closed_form() {
        // Points on the line y = 2x plus a small orthogonal wobble.
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 - 9.5;
                let w = if i % 2 == 0 { 0.1 } else { -0.1 };
                vec![t - 2.0 * w, 2.0 * t + w]
            })
            .collect();
        let m = pca_fit(&pts, 1).unwrap();
        // Closed-form 2x2 covariance eigenvector.
        let n = pts.len() as f64;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &pts {
            let (x, y) = (p[0] - m.mean[0], p[1] - m.mean[1]);
            sxx += x * x / (n - 1.0);
            sxy += x * y / (n - 1.0);
            syy += y * y / (n - 1.0);
        }
        let tr = sxx + syy;
        let det = sxx * syy - sxy * sxy;
        let l1 = tr / 2.0 + (tr * tr / 4.0 - det).sqrt();
        let v = [sxy, l1 - sxx];
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        assert!((m.eigenvalues[0] - l1).abs() < 1e-8 * l1);
        assert!((m.components[0][0] - v[0] / norm).abs() < 1e-8);
        assert!((m.components[0][1] - v[1] / norm).abs() < 1e-8);
    }

    #[test]
    fn gram_route_and_rank_deficiency() {
        // 4 points in 10 dims spanning a 2-dim affine subspace.
        let a = [1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let pts: Vec<Vec<f64>> = [(0.0, 0.0), (1.0, 2.0), (-1.0, 1.0), (2.0, -3.0)]
            .iter()
            .map(|&(s, t)| (0..10).map(|j| 5.0 + s * a[j] + t * b[j]).collect())
            .collect();
        let m = pca_fit(&pts, 3).unwrap();
        assert!(m.eigenvalues[2].abs() < 1e-9);
        for (i, ci) in m.components.iter().enumerate() {
            for (j, cj) in m.components.iter().enumerate() {
                let dot: f64 = ci.iter().zip(cj).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        for p in &pts {
            let r = m.reconstruct(&m.project(p).unwrap()).unwrap();
            assert!(r.iter().zip(p).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(pca_fit(&[vec![1.0, 2.0]], 1), Err(SpeakerError::TooFew { .. })));
        let same = vec![vec![1.0, 2.0, 3.0]; 5];
        assert!(matches!(pca_fit(&same, 1), Err(SpeakerError::Degenerate)));
        let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]];
        assert!(matches!(pca_fit(&pts, 3), Err(SpeakerError::TooManyComponents { .. })));
        let m = pca_fit(&pts, 1).unwrap();
        assert!(matches!(m.project(&[1.0]), Err(SpeakerError::DimMismatch { .. })));
        assert_eq!(m.project(&m.mean).unwrap(), vec![0.0]);
    }
}
