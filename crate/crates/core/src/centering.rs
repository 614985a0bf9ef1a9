//! Centering conditionals pi0(x_Ac | x_A; theta, phi): strictly positive,
//! continuous normal families around which the nonparametric model is a
//! multiplicative perturbation, their Normal-Inverse-Gamma-Uniform prior, and
//! the theta update.

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::constraints::{MarginalConstraint, Phi};
use crate::error::{Error, Result};
use crate::mh::{mh_step, RwStep};

const LN_2PI: f64 = 1.8378770664093453;

/// Which conditional family centers the model.
///
/// The first three are the single-unconstrained-coordinate families used in
/// the experiments; `Independent` is a product of per-coordinate normals that
/// ignores x_A, used for the unconstrained baseline (A empty) and for
/// unconstrained blocks of dimension above one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringVariant {
    /// mean mu2 + rho sigma2 sigma1^-1 (x1 - mu1), variance (1 - rho^2) sigma2^2.
    ConditionalNormal,
    /// mean mu2 + rho (x1 - mu1), variance (1 - rho^2) sigma1^2 with sigma1^2
    /// shared with the Gaussian marginal constraint.
    SharedVariance,
    /// mean mu2 + rho sigma2 s_x^-1 (x1 - m_x), variance (1 - rho^2) sigma2^2,
    /// with (m_x, s_x) the constraint family's moments at phi.
    StandardizedMoments,
    /// Product of independent normals over the unconstrained coordinates.
    Independent,
}

/// Centering parameters. `Correlated` covers the paper's three conditional
/// families (for SharedVariance, `scale_sq` is the shared sigma1^2);
/// `Independent` carries one (mean, variance) pair per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CenteringParams {
    Correlated { rho: f64, mu2: f64, scale_sq: f64 },
    Independent { means: Vec<f64>, vars: Vec<f64> },
}

impl CenteringParams {
    pub fn validate(&self) -> Result<()> {
        match self {
            CenteringParams::Correlated { rho, mu2, scale_sq } => {
                if !rho.is_finite() || rho.abs() > 1.0 {
                    return Err(Error::InvalidParameter(format!("|rho| must be <= 1, got {}", rho)));
                }
                if !mu2.is_finite() {
                    return Err(Error::InvalidParameter("mu2 must be finite".into()));
                }
                if !(*scale_sq > 0.0) || !scale_sq.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "scale_sq must be positive, got {}",
                        scale_sq
                    )));
                }
            }
            CenteringParams::Independent { means, vars } => {
                if means.len() != vars.len() || means.is_empty() {
                    return Err(Error::InvalidParameter(
                        "independent centering needs matching nonempty means/vars".into(),
                    ));
                }
                for (m, v) in means.iter().zip(vars) {
                    if !m.is_finite() || !(*v > 0.0) || !v.is_finite() {
                        return Err(Error::InvalidParameter(
                            "independent centering parameters out of range".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Normal-Inverse-Gamma-Uniform prior hyperparameters:
/// p(rho, mu2, s^2) ∝ N(mu2; mu0, s^2/k0) InvGamma(s^2; alpha0, beta0) 1[-1,1](rho).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NiguPrior {
    pub mu0: f64,
    pub k0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl NiguPrior {
    pub fn validate(&self) -> Result<()> {
        if !self.mu0.is_finite() || self.k0 <= 0.0 || self.alpha0 <= 0.0 || self.beta0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "invalid Normal-Inverse-Gamma-Uniform hyperparameters {:?}",
                self
            )));
        }
        Ok(())
    }

    fn log_inv_gamma(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.alpha0 * self.beta0.ln() - ln_gamma(self.alpha0)
            - (self.alpha0 + 1.0) * v.ln()
            - self.beta0 / v
    }

    fn log_normal_given_scale(&self, mu: f64, scale_sq: f64) -> f64 {
        -0.5 * LN_2PI - 0.5 * (scale_sq / self.k0).ln()
            - (mu - self.mu0) * (mu - self.mu0) * self.k0 / (2.0 * scale_sq)
    }

    fn draw_pair<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        // InvGamma(alpha, beta) as 1 / Gamma(alpha, scale = 1/beta).
        let g: f64 = GammaDist::new(self.alpha0, 1.0 / self.beta0).unwrap().sample(rng);
        let scale_sq = 1.0 / g;
        // Tiny alpha0 underflows the gamma draw; hand back an infinite pair
        // for the caller to validate rather than panicking.
        let sd = (scale_sq / self.k0).sqrt();
        if !sd.is_finite() {
            return (f64::INFINITY, scale_sq);
        }
        let mu = Normal::new(self.mu0, sd).unwrap().sample(rng);
        (mu, scale_sq)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CenteringModel {
    pub variant: CenteringVariant,
    pub prior: NiguPrior,
}

impl CenteringModel {
    pub fn new(variant: CenteringVariant, prior: NiguPrior) -> Result<Self> {
        prior.validate()?;
        Ok(CenteringModel { variant, prior })
    }

    /// Does pi0 depend on phi? Decides conjugate versus Metropolis phi updates.
    pub fn is_phi_free(&self) -> bool {
        matches!(self.variant, CenteringVariant::Independent)
    }

    /// Per-coordinate conditional means and variances of x_Ac given x_A.
    pub fn mean_var(
        &self,
        theta: &CenteringParams,
        phi: Option<&Phi>,
        x_a: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self.variant, theta) {
            (CenteringVariant::Independent, CenteringParams::Independent { means, vars }) => {
                Ok((means.clone(), vars.clone()))
            }
            (variant, CenteringParams::Correlated { rho, mu2, scale_sq }) => {
                if rho.abs() >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "degenerate centering: |rho| = {} >= 1",
                        rho.abs()
                    )));
                }
                if x_a.len() != 1 {
                    return Err(Error::Unsupported(
                        "correlated centering variants need exactly one constrained coordinate"
                            .into(),
                    ));
                }
                let x1 = x_a[0];
                let (mean, var) = match variant {
                    CenteringVariant::ConditionalNormal => {
                        let (mu1, sigma1) = match phi {
                            Some(Phi::Gaussian { mean, var }) => (*mean, var.sqrt()),
                            _ => {
                                return Err(Error::InvalidParameter(
                                    "conditional_normal centering needs a Gaussian phi".into(),
                                ))
                            }
                        };
                        (
                            mu2 + rho * scale_sq.sqrt() / sigma1 * (x1 - mu1),
                            (1.0 - rho * rho) * scale_sq,
                        )
                    }
                    CenteringVariant::SharedVariance => {
                        let mu1 = match phi {
                            Some(Phi::Gaussian { mean, .. }) => *mean,
                            _ => {
                                return Err(Error::InvalidParameter(
                                    "shared_variance centering needs a Gaussian phi".into(),
                                ))
                            }
                        };
                        (mu2 + rho * (x1 - mu1), (1.0 - rho * rho) * scale_sq)
                    }
                    CenteringVariant::StandardizedMoments => {
                        let phi = phi.ok_or_else(|| {
                            Error::InvalidParameter(
                                "standardized_moments centering needs phi".into(),
                            )
                        })?;
                        let (m_x, s_x) = phi.moments()?;
                        (
                            mu2 + rho * scale_sq.sqrt() / s_x * (x1 - m_x),
                            (1.0 - rho * rho) * scale_sq,
                        )
                    }
                    CenteringVariant::Independent => unreachable!("matched above"),
                };
                if !(var > 0.0) || !mean.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "degenerate centering law: mean {}, variance {}",
                        mean, var
                    )));
                }
                Ok((vec![mean], vec![var]))
            }
            _ => Err(Error::InvalidParameter(
                "centering parameters do not match the variant".into(),
            )),
        }
    }

    pub fn logpdf(
        &self,
        theta: &CenteringParams,
        phi: Option<&Phi>,
        x_a: &[f64],
        x_ac: &[f64],
    ) -> Result<f64> {
        let (means, vars) = self.mean_var(theta, phi, x_a)?;
        if x_ac.len() != means.len() {
            return Err(Error::DimensionMismatch(format!(
                "unconstrained block has {} coordinates, centering has {}",
                x_ac.len(),
                means.len()
            )));
        }
        Ok(x_ac
            .iter()
            .zip(means.iter().zip(&vars))
            .map(|(x, (m, v))| -0.5 * LN_2PI - 0.5 * v.ln() - (x - m) * (x - m) / (2.0 * v))
            .sum())
    }

    pub fn sample<R: Rng>(
        &self,
        theta: &CenteringParams,
        phi: Option<&Phi>,
        x_a: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (means, vars) = self.mean_var(theta, phi, x_a)?;
        Ok(means
            .iter()
            .zip(&vars)
            .map(|(m, v)| Normal::new(*m, v.sqrt()).unwrap().sample(rng))
            .collect())
    }

    /// Draw theta from the prior: scale from the inverse gamma, location
    /// normal given the scale, rho uniform on [-1, 1] independently.
    pub fn sample_theta_prior<R: Rng>(&self, dim_ac: usize, rng: &mut R) -> CenteringParams {
        match self.variant {
            CenteringVariant::Independent => {
                let mut means = Vec::with_capacity(dim_ac);
                let mut vars = Vec::with_capacity(dim_ac);
                for _ in 0..dim_ac {
                    let (m, v) = self.prior.draw_pair(rng);
                    means.push(m);
                    vars.push(v);
                }
                CenteringParams::Independent { means, vars }
            }
            _ => {
                let (mu2, scale_sq) = self.prior.draw_pair(rng);
                let rho = rng.gen_range(-1.0..=1.0);
                CenteringParams::Correlated { rho, mu2, scale_sq }
            }
        }
    }

    /// Log prior density of theta; negative infinity outside the support.
    pub fn theta_log_prior(&self, theta: &CenteringParams) -> f64 {
        match theta {
            CenteringParams::Correlated { rho, mu2, scale_sq } => {
                if rho.abs() > 1.0 || *scale_sq <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                // Uniform density 1/2 on [-1, 1].
                self.prior.log_inv_gamma(*scale_sq)
                    + self.prior.log_normal_given_scale(*mu2, *scale_sq)
                    + (0.5f64).ln()
            }
            CenteringParams::Independent { means, vars } => {
                let mut lp = 0.0;
                for (m, v) in means.iter().zip(vars) {
                    if *v <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    lp += self.prior.log_inv_gamma(*v) + self.prior.log_normal_given_scale(*m, *v);
                }
                lp
            }
        }
    }
}

/// Everything the theta update needs. When the centering shares its scale
/// with a Gaussian marginal constraint, the constrained coordinates and the
/// phi prior both depend on that scale, so their factors join the target.
pub struct ThetaUpdate<'a> {
    pub model: &'a CenteringModel,
    pub phi: Option<&'a Phi>,
    pub constraint: Option<&'a MarginalConstraint>,
    pub data_xa: &'a [Vec<f64>],
    pub data_xac: &'a [Vec<f64>],
    pub rejected: &'a [Vec<Vec<f64>>],
    /// Skip the Metropolis correction (accept every proposal). Only the
    /// correctness harness sets this, to prove it can detect the breakage.
    pub force_accept: bool,
}

/// Log target for the theta conditional at a given theta (and the phi
/// implied when the scale is shared). Exposed for oracle tests.
pub fn theta_log_target(u: &ThetaUpdate, theta: &CenteringParams) -> Result<f64> {
    let mut lt = u.model.theta_log_prior(theta);
    if !lt.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let phi_eff = effective_phi(u, theta);
    let phi_ref = phi_eff.as_ref();
    for (i, (xa, xac)) in u.data_xa.iter().zip(u.data_xac).enumerate() {
        lt += u.model.logpdf(theta, phi_ref, xa, xac)?;
        for y in &u.rejected[i] {
            lt += u.model.logpdf(theta, phi_ref, xa, y)?;
        }
    }
    if u.model.variant == CenteringVariant::SharedVariance {
        if let (Some(c), Some(phi), CenteringParams::Correlated { scale_sq, .. }) =
            (u.constraint, phi_ref, theta)
        {
            for xa in u.data_xa {
                lt += c.marginal_logpdf(phi, xa)?;
            }
            lt += c.phi_log_prior(phi, Some(*scale_sq))?;
        }
    }
    Ok(lt)
}

/// The phi whose variance tracks theta's scale under shared variance.
fn effective_phi(u: &ThetaUpdate, theta: &CenteringParams) -> Option<Phi> {
    match (u.model.variant, u.phi, theta) {
        (
            CenteringVariant::SharedVariance,
            Some(Phi::Gaussian { mean, .. }),
            CenteringParams::Correlated { scale_sq, .. },
        ) => Some(Phi::Gaussian { mean: *mean, var: *scale_sq }),
        _ => u.phi.copied(),
    }
}

/// One Metropolis-within-Gibbs transition for theta, componentwise on
/// (atanh rho, mu2, log scale^2) or per-coordinate (mean, log var), with
/// Jacobian corrections for the transformed coordinates.
pub fn update_theta<R: Rng>(
    u: &ThetaUpdate,
    theta: &CenteringParams,
    step: &mut RwStep,
    adapt: bool,
    rng: &mut R,
) -> Result<CenteringParams> {
    let to_coords = |t: &CenteringParams| -> Vec<f64> {
        match t {
            CenteringParams::Correlated { rho, mu2, scale_sq } => {
                vec![rho.atanh(), *mu2, scale_sq.ln()]
            }
            CenteringParams::Independent { means, vars } => means
                .iter()
                .cloned()
                .chain(vars.iter().map(|v| v.ln()))
                .collect(),
        }
    };
    let dim = match theta {
        CenteringParams::Independent { means, .. } => means.len(),
        _ => 1,
    };
    let from_coords = |z: &[f64]| -> CenteringParams {
        match theta {
            CenteringParams::Correlated { .. } => CenteringParams::Correlated {
                rho: z[0].tanh(),
                mu2: z[1],
                scale_sq: z[2].exp(),
            },
            CenteringParams::Independent { .. } => CenteringParams::Independent {
                means: z[..dim].to_vec(),
                vars: z[dim..].iter().map(|v| v.exp()).collect(),
            },
        }
    };
    // log |d theta / d z|: log(1 - rho^2) for the atanh coordinate and +z for
    // every log-scale coordinate.
    let log_jacobian = |z: &[f64]| -> f64 {
        match theta {
            CenteringParams::Correlated { .. } => {
                let rho = z[0].tanh();
                (1.0 - rho * rho).ln() + z[2]
            }
            CenteringParams::Independent { .. } => z[dim..].iter().sum(),
        }
    };
    let target = |z: &[f64]| -> f64 {
        let cand = from_coords(z);
        match theta_log_target(u, &cand) {
            Ok(lt) => lt + log_jacobian(z),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut coords = to_coords(theta);
    if step.len() != coords.len() {
        *step = RwStep::new(coords.len(), 0.3);
    }
    let mut current_lt = target(&coords);
    if !current_lt.is_finite() {
        return Err(Error::Numeric(
            "theta update started outside the target support".into(),
        ));
    }
    for i in 0..coords.len() {
        let snapshot = coords.clone();
        let lt_fn = |v: f64| {
            let mut cand = snapshot.clone();
            cand[i] = v;
            target(&cand)
        };
        if u.force_accept {
            use rand_distr::StandardNormal;
            let z: f64 = rng.sample(StandardNormal);
            coords[i] += step.size(i) * z;
            current_lt = target(&coords);
        } else {
            let (nv, nlt, accepted) = mh_step(coords[i], current_lt, step.size(i), lt_fn, rng);
            coords[i] = nv;
            current_lt = nlt;
            step.record(i, accepted, adapt);
        }
    }
    Ok(from_coords(&coords))
}
