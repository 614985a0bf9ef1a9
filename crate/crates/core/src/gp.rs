//! Gaussian-process realizations over finite point sets: incremental
//! conditioning, restriction, and the log-density of instantiated values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{self, KernelParams};

/// Solve L x = b for lower-triangular L.
fn forward_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        let d = l[(i, i)];
        if d == 0.0 {
            return Err(Error::NotPositiveDefinite(
                "zero pivot in triangular solve (degenerate factor)".into(),
            ));
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Solve L X = B columnwise for lower-triangular L.
fn forward_solve_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let mut x = b.clone();
    for c in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for j in 0..i {
                s -= l[(i, j)] * x[(j, c)];
            }
            let d = l[(i, i)];
            if d == 0.0 {
                return Err(Error::NotPositiveDefinite(
                    "zero pivot in triangular solve (degenerate factor)".into(),
                ));
            }
            x[(i, c)] = s / d;
        }
    }
    Ok(x)
}

/// Solve L^T x = b for lower-triangular L.
fn back_solve_transposed(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= l[(j, i)] * x[j];
        }
        let d = l[(i, i)];
        if d == 0.0 {
            return Err(Error::NotPositiveDefinite(
                "zero pivot in triangular solve (degenerate factor)".into(),
            ));
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Lower Cholesky factor. With `strict`, any nonpositive pivot is an error.
/// Without it, pivots within a small tolerance of zero produce a zero row,
/// which encodes a degenerate (deterministic) direction of a conditional
/// law; pivots below the tolerance are still an error.
fn chol_lower(a: &DMatrix<f64>, strict: bool) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = a.clone();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(1.0f64, f64::max);
    let tol = 1e-12 * scale;
    for j in 0..n {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if strict {
            if d <= 0.0 {
                return Err(Error::NotPositiveDefinite(format!(
                    "pivot {} at index {} (of {}); duplicate points or too-small jitter",
                    d, j, n
                )));
            }
        } else if d <= tol {
            if d < -tol {
                return Err(Error::NotPositiveDefinite(format!(
                    "pivot {} at index {} in conditional covariance",
                    d, j
                )));
            }
            // Degenerate direction: zero the pivot column.
            for k in j..n {
                l[(k, j)] = 0.0;
            }
            continue;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    // Zero the upper triangle.
    for i in 0..n {
        for j in (i + 1)..n {
            l[(i, j)] = 0.0;
        }
    }
    Ok(l)
}

/// Conditional law of the GP at a set of new points: mean vector and a lower
/// Cholesky factor of the conditional covariance (jitter included).
#[derive(Clone, Debug)]
pub struct GpConditional {
    mean: DVector<f64>,
    cov_chol: DMatrix<f64>,
    // L^{-1} K_{old,new}; retained so an extension can reuse it.
    cross: DMatrix<f64>,
}

impl GpConditional {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov_chol(&self) -> &DMatrix<f64> {
        &self.cov_chol
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let k = self.mean.len();
        let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.cov_chol * z
    }
}

/// A Gaussian process instantiated at a finite, ordered set of locations.
///
/// Invariants: `points.len() == values.len()`; `factor` is a lower Cholesky
/// factor of the jittered Gram matrix over `points`. Value semantics: no
/// hidden shared state, read-only use is thread-safe, mutation requires
/// exclusive access.
#[derive(Clone, Debug)]
pub struct GpRealization {
    points: Vec<Vec<f64>>,
    values: DVector<f64>,
    mean_const: f64,
    kernel: KernelParams,
    factor: DMatrix<f64>,
    sqdist: DMatrix<f64>,
}

impl GpRealization {
    pub fn empty(mean_const: f64, kernel: KernelParams) -> Self {
        GpRealization {
            points: Vec::new(),
            values: DVector::zeros(0),
            mean_const,
            kernel,
            factor: DMatrix::zeros(0, 0),
            sqdist: DMatrix::zeros(0, 0),
        }
    }

    /// Rebuild a realization from stored points and values (checkpoint
    /// restore, per-sample evaluation).
    pub fn from_parts(
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
        mean_const: f64,
        kernel: KernelParams,
    ) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        kernel.validate()?;
        let sqdist = kernel::squared_distance_matrix(&points)?;
        let gram = kernel::gram_from_squared_distances(&sqdist, &kernel);
        let factor = if points.is_empty() {
            DMatrix::zeros(0, 0)
        } else {
            chol_lower(&gram, true)?
        };
        Ok(GpRealization {
            points,
            values: DVector::from_vec(values),
            mean_const,
            kernel,
            factor,
            sqdist,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn mean_const(&self) -> f64 {
        self.mean_const
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn lengthscale(&self) -> f64 {
        self.kernel.lengthscale
    }

    /// Replace the instantiated values (the factor does not depend on them).
    pub fn set_values(&mut self, values: DVector<f64>) -> Result<()> {
        if values.len() != self.points.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} points",
                values.len(),
                self.points.len()
            )));
        }
        self.values = values;
        Ok(())
    }

    fn check_dim(&self, new_points: &[Vec<f64>]) -> Result<()> {
        if let Some(p) = self.points.first() {
            for q in new_points {
                if q.len() != p.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "new point has dimension {}, state has {}",
                        q.len(),
                        p.len()
                    )));
                }
            }
        } else if let Some(first) = new_points.first() {
            for q in new_points {
                if q.len() != first.len() {
                    return Err(Error::DimensionMismatch(
                        "new points have mixed dimensions".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Conditional law of the GP at `new_points` given the instantiated
    /// values. Exact multivariate-normal conditioning through the factor.
    pub fn conditional_law(&self, new_points: &[Vec<f64>]) -> Result<GpConditional> {
        self.check_dim(new_points)?;
        let k = new_points.len();
        if k == 0 {
            return Ok(GpConditional {
                mean: DVector::zeros(0),
                cov_chol: DMatrix::zeros(0, 0),
                cross: DMatrix::zeros(self.len(), 0),
            });
        }
        let mut gram_new = kernel::gram(new_points, &self.kernel)?;
        if self.is_empty() {
            let mean = DVector::from_element(k, self.mean_const);
            let cov_chol = chol_lower(&gram_new, false)?;
            return Ok(GpConditional {
                mean,
                cov_chol,
                cross: DMatrix::zeros(0, k),
            });
        }
        let k_on = kernel::cross_gram(&self.points, new_points, &self.kernel)?;
        let c = forward_solve_mat(&self.factor, &k_on)?; // m x k
        let centered = &self.values - DVector::from_element(self.len(), self.mean_const);
        let w = forward_solve_vec(&self.factor, &centered)?;
        let mean = DVector::from_element(k, self.mean_const) + c.transpose() * &w;
        gram_new -= c.transpose() * &c;
        let cov_chol = chol_lower(&gram_new, false)?;
        Ok(GpConditional {
            mean,
            cov_chol,
            cross: c,
        })
    }

    /// Draw values at `new_points` conditionally without extending the state.
    pub fn draw_at<R: Rng>(&self, new_points: &[Vec<f64>], rng: &mut R) -> Result<DVector<f64>> {
        Ok(self.conditional_law(new_points)?.draw(rng))
    }

    /// Draw values at `new_points` from the conditional law and append them,
    /// extending the factor by a rank-k block (no full refactorization).
    pub fn extend<R: Rng>(
        &mut self,
        new_points: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let law = self.conditional_law(new_points)?;
        let vals = law.draw(rng);
        self.append_block(new_points, &vals, &law)?;
        Ok(vals)
    }

    /// Append points with externally chosen values using an already computed
    /// conditional law (the factor extension only needs the law's geometry).
    pub fn extend_with_values(
        &mut self,
        new_points: &[Vec<f64>],
        values: &DVector<f64>,
        law: &GpConditional,
    ) -> Result<()> {
        self.append_block(new_points, values, law)
    }

    fn append_block(
        &mut self,
        new_points: &[Vec<f64>],
        vals: &DVector<f64>,
        law: &GpConditional,
    ) -> Result<()> {
        let m = self.len();
        let k = new_points.len();
        if k == 0 {
            return Ok(());
        }
        if vals.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} new points",
                vals.len(),
                k
            )));
        }
        // Factor extension: [[L, 0], [C^T, chol(S)]].
        let mut factor = DMatrix::zeros(m + k, m + k);
        factor.view_mut((0, 0), (m, m)).copy_from(&self.factor);
        factor
            .view_mut((m, 0), (k, m))
            .copy_from(&law.cross.transpose());
        factor
            .view_mut((m, m), (k, k))
            .copy_from(&law.cov_chol);

        let mut sqdist = DMatrix::zeros(m + k, m + k);
        sqdist.view_mut((0, 0), (m, m)).copy_from(&self.sqdist);
        for (j, q) in new_points.iter().enumerate() {
            for i in 0..m {
                let d2 = kernel::squared_distance(&self.points[i], q)?;
                sqdist[(i, m + j)] = d2;
                sqdist[(m + j, i)] = d2;
            }
            for i in 0..j {
                let d2 = kernel::squared_distance(&new_points[i], q)?;
                sqdist[(m + i, m + j)] = d2;
                sqdist[(m + j, m + i)] = d2;
            }
        }

        self.factor = factor;
        self.sqdist = sqdist;
        self.points.extend(new_points.iter().cloned());
        self.values = DVector::from_iterator(
            m + k,
            self.values.iter().cloned().chain(vals.iter().cloned()),
        );
        Ok(())
    }

    /// Keep exactly the listed indices (in the listed order) and rebuild the
    /// factor over the retained points.
    pub fn restrict(&mut self, keep: &[usize]) -> Result<()> {
        let m = self.len();
        let mut seen = vec![false; m];
        for &i in keep {
            if i >= m {
                return Err(Error::InvalidParameter(format!(
                    "restrict index {} out of range (len {})",
                    i, m
                )));
            }
            if seen[i] {
                return Err(Error::InvalidParameter(format!(
                    "restrict index {} repeated",
                    i
                )));
            }
            seen[i] = true;
        }
        let points: Vec<Vec<f64>> = keep.iter().map(|&i| self.points[i].clone()).collect();
        let values = DVector::from_iterator(keep.len(), keep.iter().map(|&i| self.values[i]));
        let n = keep.len();
        let mut sqdist = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                sqdist[(a, b)] = self.sqdist[(keep[a], keep[b])];
            }
        }
        let gram = kernel::gram_from_squared_distances(&sqdist, &self.kernel);
        let factor = if n == 0 {
            DMatrix::zeros(0, 0)
        } else {
            chol_lower(&gram, true)?
        };
        self.points = points;
        self.values = values;
        self.sqdist = sqdist;
        self.factor = factor;
        Ok(())
    }

    /// Log multivariate-normal density of the instantiated values under the
    /// constant mean and the jittered Gram matrix.
    pub fn logpdf(&self) -> Result<f64> {
        let m = self.len();
        if m == 0 {
            return Err(Error::InvalidParameter(
                "logpdf of an empty realization".into(),
            ));
        }
        let centered = &self.values - DVector::from_element(m, self.mean_const);
        let w = forward_solve_vec(&self.factor, &centered)?;
        let log_det_half: f64 = (0..m).map(|i| self.factor[(i, i)].ln()).sum();
        Ok(-0.5 * w.norm_squared()
            - log_det_half
            - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln())
    }

    /// d/d(log lengthscale) of `logpdf`, used by the lengthscale HMC update.
    pub fn grad_logpdf_wrt_log_lengthscale(&self) -> Result<f64> {
        let m = self.len();
        if m == 0 {
            return Err(Error::InvalidParameter(
                "gradient of an empty realization".into(),
            ));
        }
        let l2 = self.kernel.lengthscale * self.kernel.lengthscale;
        // dK/d(log l) = K_kernel .* (sqdist / l^2); diagonal is zero so the
        // jitter never enters.
        let inv = -1.0 / (2.0 * l2);
        let mut dk = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let d2 = self.sqdist[(i, j)];
                dk[(i, j)] = self.kernel.signal_variance * (d2 * inv).exp() * d2 / l2;
            }
        }
        let centered = &self.values - DVector::from_element(m, self.mean_const);
        let w = forward_solve_vec(&self.factor, &centered)?;
        let alpha = back_solve_transposed(&self.factor, &w)?;
        let quad = alpha.dot(&(&dk * &alpha));
        let linv = forward_solve_mat(&self.factor, &DMatrix::identity(m, m))?;
        let kinv = linv.transpose() * &linv;
        let trace = kinv.iter().zip(dk.iter()).map(|(a, b)| a * b).sum::<f64>();
        Ok(0.5 * (quad - trace))
    }

    /// Change the lengthscale and refactor the Gram matrix (cached squared
    /// distances make this an elementwise map plus one Cholesky).
    pub fn set_lengthscale(&mut self, lengthscale: f64) -> Result<()> {
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive and finite, got {}",
                lengthscale
            )));
        }
        self.kernel.lengthscale = lengthscale;
        if self.len() > 0 {
            let gram = kernel::gram_from_squared_distances(&self.sqdist, &self.kernel);
            self.factor = chol_lower(&gram, true)?;
        }
        Ok(())
    }

    /// A zero-mean draw from the prior at the instantiated points (factor
    /// times standard normals); used by elliptical slice proposals.
    pub fn prior_noise<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let m = self.len();
        let z = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.factor * z
    }
}
