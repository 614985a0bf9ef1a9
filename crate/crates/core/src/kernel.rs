//! Squared-exponential kernel over concatenated (constrained, unconstrained)
//! coordinates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-exponential kernel parameters plus the diagonal jitter used to
/// keep Gram matrices factorable when proposal locations nearly coincide.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscale: f64,
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscale: f64) -> Result<Self> {
        let k = KernelParams {
            signal_variance,
            lengthscale,
            // Duplicated proposal locations are legal; the jitter resolves them.
            jitter: 1e-8 * signal_variance,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        self.jitter = jitter;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "signal_variance must be positive and finite, got {}",
                self.signal_variance
            )));
        }
        if !(self.lengthscale > 0.0) || !self.lengthscale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive and finite, got {}",
                self.lengthscale
            )));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "jitter must be nonnegative and finite, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Squared Euclidean distance with a dimension check.
pub fn squared_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel inputs have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// k(x, y) = signal_variance * exp(-|x - y|^2 / (2 lengthscale^2)).
pub fn kernel_eval(x: &[f64], y: &[f64], params: &KernelParams) -> Result<f64> {
    let d2 = squared_distance(x, y)?;
    Ok(params.signal_variance * (-d2 / (2.0 * params.lengthscale * params.lengthscale)).exp())
}

/// Matrix of pairwise squared distances.
pub fn squared_distance_matrix(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = points.len();
    let mut d = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = squared_distance(&points[i], &points[j])?;
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Gram matrix with jitter added to the diagonal.
pub fn gram(points: &[Vec<f64>], params: &KernelParams) -> Result<DMatrix<f64>> {
    let d = squared_distance_matrix(points)?;
    Ok(gram_from_squared_distances(&d, params))
}

/// Gram matrix (with jitter) from precomputed squared distances.
pub fn gram_from_squared_distances(sqdist: &DMatrix<f64>, params: &KernelParams) -> DMatrix<f64> {
    let inv = -1.0 / (2.0 * params.lengthscale * params.lengthscale);
    let mut k = sqdist.map(|d2| params.signal_variance * (d2 * inv).exp());
    for i in 0..k.nrows() {
        k[(i, i)] += params.jitter;
    }
    k
}

/// Cross-covariance matrix between two point sets (no jitter).
pub fn cross_gram(a: &[Vec<f64>], b: &[Vec<f64>], params: &KernelParams) -> Result<DMatrix<f64>> {
    let mut k = DMatrix::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            k[(i, j)] = kernel_eval(&a[i], &b[j], params)?;
        }
    }
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn params(l: f64) -> KernelParams {
        KernelParams::new(1.0, l).unwrap()
    }

    #[test]
    fn same_point_gives_signal_variance() {
        let x = vec![0.4, -2.0];
        assert_eq!(kernel_eval(&x, &x, &params(1.5)).unwrap(), 1.0);
        let p = KernelParams::new(3.7, 0.2).unwrap();
        assert_eq!(kernel_eval(&x, &x, &p).unwrap(), 3.7);
    }

    #[test]
    fn half_value_at_l_sqrt_2_ln2() {
        let l = 0.8;
        let d = l * (2.0 * 2.0f64.ln()).sqrt();
        let v = kernel_eval(&[0.0], &[d], &params(l)).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn large_lengthscale_approaches_signal_variance() {
        let v = kernel_eval(&[0.0, 0.0], &[3.0, -4.0], &params(1e9)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_in_arguments() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let p = params(rng.gen_range(0.1..4.0));
            assert_eq!(
                kernel_eval(&x, &y, &p).unwrap(),
                kernel_eval(&y, &x, &p).unwrap()
            );
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(kernel_eval(&[0.0], &[0.0, 1.0], &params(1.0)).is_err());
    }

    #[test]
    fn gram_is_positive_semidefinite_before_jitter() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for trial in 0..20 {
            let n = 2 + (trial % 7);
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .collect();
            let p = KernelParams::new(1.0, rng.gen_range(0.2..3.0))
                .unwrap()
                .with_jitter(0.0)
                .unwrap();
            let k = gram(&pts, &p).unwrap();
            let eigs = k.symmetric_eigenvalues();
            for e in eigs.iter() {
                assert!(*e >= -1e-8, "eigenvalue {} below -1e-8", e);
            }
        }
    }
}
