use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SequenceSample;
use crate::dense::Matrix;
use crate::error::{Error, Result};

/// Order-1 affine forecaster `û = A·u_prev + b`, fit by least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearAr {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl LinearAr {
    pub fn identity(dim: usize) -> Self {
        let mut a = Matrix::zeros(dim, dim);
        for i in 0..dim {
            a.set(i, i, 1.0);
        }
        LinearAr { a, b: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// Minimum-norm least-squares solution via the SVD pseudo-inverse.
    pub fn fit(samples: &[SequenceSample]) -> Result<Self> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Empty("no samples to fit".into()));
        }
        let k = samples[0].target.len();
        let x = DMatrix::from_fn(n, k + 1, |i, j| {
            if j == k {
                1.0
            } else {
                samples[i].history.last().expect("nonempty history")[j]
            }
        });
        let y = DMatrix::from_fn(n, k, |i, j| samples[i].target[j]);
        let pinv = x
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::NonFinite(format!("pseudo-inverse failed: {e}")))?;
        let coef = pinv * y;
        let a = Matrix::from_vec(k, k, (0..k * k).map(|idx| coef[(idx % k, idx / k)]).collect())?;
        let b = (0..k).map(|j| coef[(k, j)]).collect();
        let fitted = LinearAr { a, b };
        if !fitted.a.is_finite() || fitted.b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: 0,
                reason: "least-squares fit produced non-finite coefficients".into(),
            });
        }
        Ok(fitted)
    }

    pub fn predict(&self, history: &[Vec<f64>]) -> Vec<f64> {
        let last = history.last().expect("nonempty history");
        self.a
            .mul_vec(last)
            .into_iter()
            .zip(&self.b)
            .map(|(v, b)| v + b)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_known_affine_map() {
        let samples: Vec<SequenceSample> = (0..12)
            .map(|i| {
                let u = vec![i as f64, (i * i % 7) as f64];
                SequenceSample {
                    user_id: format!("u{i}"),
                    t: 1,
                    target: vec![2.0 * u[0] - u[1] + 1.0, 0.5 * u[1] - 3.0],
                    history: vec![u],
                }
            })
            .collect();
        let m = LinearAr::fit(&samples).unwrap();
        assert!((m.a.get(0, 0) - 2.0).abs() < 1e-9);
        assert!((m.a.get(0, 1) + 1.0).abs() < 1e-9);
        assert!((m.a.get(1, 1) - 0.5).abs() < 1e-9);
        assert!((m.b[1] + 3.0).abs() < 1e-9);
    }
}
