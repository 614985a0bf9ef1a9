//! Marginal constraint families p_A(. | phi): sampling, log-density, priors
//! on phi, the phi update, and the moment summaries used by centering
//! distributions.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp, Gamma as GammaDist, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mh::{mh_step, RwStep};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    Gaussian,
    Lognormal,
    Exponential,
}

/// Parameters of the constraint family. The variant determines the family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Phi {
    Gaussian { mean: f64, var: f64 },
    Lognormal { mu: f64, sigma_sq: f64 },
    Exponential { rate: f64 },
}

impl Phi {
    pub fn family(&self) -> ConstraintFamily {
        match self {
            Phi::Gaussian { .. } => ConstraintFamily::Gaussian,
            Phi::Lognormal { .. } => ConstraintFamily::Lognormal,
            Phi::Exponential { .. } => ConstraintFamily::Exponential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Phi::Gaussian { mean, var } => mean.is_finite() && *var > 0.0 && var.is_finite(),
            Phi::Lognormal { mu, sigma_sq } => {
                mu.is_finite() && *sigma_sq > 0.0 && sigma_sq.is_finite()
            }
            Phi::Exponential { rate } => *rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid phi {:?}", self)))
        }
    }

    pub fn supports(&self, x: f64) -> bool {
        match self {
            Phi::Gaussian { .. } => x.is_finite(),
            Phi::Lognormal { .. } | Phi::Exponential { .. } => x.is_finite() && x > 0.0,
        }
    }

    /// Log density of a single constrained coordinate; out-of-support values
    /// evaluate to negative infinity.
    pub fn logpdf_scalar(&self, x: f64) -> f64 {
        match self {
            Phi::Gaussian { mean, var } => {
                -0.5 * LN_2PI - 0.5 * var.ln() - (x - mean) * (x - mean) / (2.0 * var)
            }
            Phi::Lognormal { mu, sigma_sq } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let lx = x.ln();
                -lx - 0.5 * LN_2PI - 0.5 * sigma_sq.ln() - (lx - mu) * (lx - mu) / (2.0 * sigma_sq)
            }
            Phi::Exponential { rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                rate.ln() - rate * x
            }
        }
    }

    pub fn draw_scalar<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Phi::Gaussian { mean, var } => {
                Normal::new(*mean, var.sqrt()).unwrap().sample(rng)
            }
            Phi::Lognormal { mu, sigma_sq } => {
                Normal::new(*mu, sigma_sq.sqrt()).unwrap().sample(rng).exp()
            }
            Phi::Exponential { rate } => Exp::new(*rate).unwrap().sample(rng),
        }
    }

    /// Exact mean and standard deviation of the family at these parameters.
    pub fn moments(&self) -> Result<(f64, f64)> {
        match self {
            Phi::Gaussian { mean, var } => Ok((*mean, var.sqrt())),
            Phi::Lognormal { mu, sigma_sq } => {
                let m = (mu + sigma_sq / 2.0).exp();
                let v = (sigma_sq.exp() - 1.0) * (2.0 * mu + sigma_sq).exp();
                if !m.is_finite() || !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "lognormal moments overflow at mu={}, sigma_sq={}",
                        mu, sigma_sq
                    )));
                }
                Ok((m, v.sqrt()))
            }
            Phi::Exponential { rate } => Ok((1.0 / rate, 1.0 / rate)),
        }
    }
}

/// Prior on phi. `Dirac` encodes a fully specified distribution constraint;
/// the others encode family constraints with unknown parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorSpec {
    Dirac { phi: Phi },
    NormalInvChiSq { mu0: f64, k0: f64, v0: f64, sigma0_sq: f64 },
    Gamma { shape: f64, rate: f64 },
    /// Prior on the location only, with the scale tied to the centering's
    /// shared variance: mean | sigma^2 ~ N(mu0, sigma^2 / k0).
    NormalGivenVariance { mu0: f64, k0: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            PriorSpec::Dirac { phi } => return phi.validate(),
            PriorSpec::NormalInvChiSq { mu0, k0, v0, sigma0_sq } => {
                mu0.is_finite() && *k0 > 0.0 && *v0 > 0.0 && *sigma0_sq > 0.0
            }
            PriorSpec::Gamma { shape, rate } => *shape > 0.0 && *rate > 0.0,
            PriorSpec::NormalGivenVariance { mu0, k0 } => mu0.is_finite() && *k0 > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid prior spec {:?}",
                self
            )))
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, PriorSpec::Dirac { .. })
    }
}

/// The marginal constraint on the block X_A: a family, a prior on its
/// parameters, and the number of constrained coordinates. With dim_a > 1 the
/// coordinates are modeled i.i.d. from the same family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarginalConstraint {
    pub family: ConstraintFamily,
    pub phi_prior: PriorSpec,
    pub dim_a: usize,
}

impl MarginalConstraint {
    pub fn new(family: ConstraintFamily, phi_prior: PriorSpec, dim_a: usize) -> Result<Self> {
        let c = MarginalConstraint {
            family,
            phi_prior,
            dim_a,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.phi_prior.validate()?;
        if self.dim_a == 0 {
            return Err(Error::InvalidParameter(
                "constraint with zero constrained coordinates".into(),
            ));
        }
        let compatible = match (&self.phi_prior, self.family) {
            (PriorSpec::Dirac { phi }, f) => phi.family() == f,
            (PriorSpec::NormalInvChiSq { .. }, ConstraintFamily::Gaussian)
            | (PriorSpec::NormalInvChiSq { .. }, ConstraintFamily::Lognormal)
            | (PriorSpec::Gamma { .. }, ConstraintFamily::Exponential)
            | (PriorSpec::NormalGivenVariance { .. }, ConstraintFamily::Gaussian) => true,
            _ => false,
        };
        if !compatible {
            return Err(Error::InvalidParameter(format!(
                "prior {:?} does not match family {:?}",
                self.phi_prior, self.family
            )));
        }
        Ok(())
    }

    /// Draw phi from its prior. The shared-variance prior needs the current
    /// coupled variance.
    pub fn sample_phi_prior<R: Rng>(&self, shared_var: Option<f64>, rng: &mut R) -> Result<Phi> {
        match &self.phi_prior {
            PriorSpec::Dirac { phi } => Ok(*phi),
            PriorSpec::NormalInvChiSq { mu0, k0, v0, sigma0_sq } => {
                let (loc, scale_sq) = draw_nix(*mu0, *k0, *v0, *sigma0_sq, rng);
                Ok(match self.family {
                    ConstraintFamily::Gaussian => Phi::Gaussian { mean: loc, var: scale_sq },
                    ConstraintFamily::Lognormal => Phi::Lognormal { mu: loc, sigma_sq: scale_sq },
                    ConstraintFamily::Exponential => unreachable!("validated"),
                })
            }
            PriorSpec::Gamma { shape, rate } => {
                let r = GammaDist::new(*shape, 1.0 / rate).unwrap().sample(rng);
                Ok(Phi::Exponential { rate: r })
            }
            PriorSpec::NormalGivenVariance { mu0, k0 } => {
                let var = shared_var.ok_or_else(|| {
                    Error::InvalidParameter(
                        "normal_given_variance prior needs the shared variance".into(),
                    )
                })?;
                let mean = Normal::new(*mu0, (var / k0).sqrt()).unwrap().sample(rng);
                Ok(Phi::Gaussian { mean, var })
            }
        }
    }

    /// Log prior density of phi (zero for a matching Dirac).
    pub fn phi_log_prior(&self, phi: &Phi, shared_var: Option<f64>) -> Result<f64> {
        match (&self.phi_prior, phi) {
            (PriorSpec::Dirac { phi: phi0 }, p) => {
                Ok(if p == phi0 { 0.0 } else { f64::NEG_INFINITY })
            }
            (PriorSpec::NormalInvChiSq { mu0, k0, v0, sigma0_sq }, p) => {
                let (loc, scale_sq) = match p {
                    Phi::Gaussian { mean, var } => (*mean, *var),
                    Phi::Lognormal { mu, sigma_sq } => (*mu, *sigma_sq),
                    _ => {
                        return Err(Error::InvalidParameter(
                            "phi does not match normal-inverse-chi-squared prior".into(),
                        ))
                    }
                };
                if scale_sq <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let half_v = v0 / 2.0;
                let lp_scale = half_v * (half_v * sigma0_sq).ln() - ln_gamma(half_v)
                    - (1.0 + half_v) * scale_sq.ln()
                    - v0 * sigma0_sq / (2.0 * scale_sq);
                let lp_loc =
                    -0.5 * LN_2PI - 0.5 * (scale_sq / k0).ln()
                        - (loc - mu0) * (loc - mu0) * k0 / (2.0 * scale_sq);
                Ok(lp_scale + lp_loc)
            }
            (PriorSpec::Gamma { shape, rate }, Phi::Exponential { rate: r }) => {
                if *r <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                Ok(shape * rate.ln() - ln_gamma(*shape) + (shape - 1.0) * r.ln() - rate * r)
            }
            (PriorSpec::NormalGivenVariance { mu0, k0 }, Phi::Gaussian { mean, var }) => {
                let v = shared_var.unwrap_or(*var);
                Ok(-0.5 * LN_2PI - 0.5 * (v / k0).ln()
                    - (mean - mu0) * (mean - mu0) * k0 / (2.0 * v))
            }
            _ => Err(Error::InvalidParameter(
                "phi does not match the prior spec".into(),
            )),
        }
    }

    /// Joint log density of a constrained block (sum over coordinates).
    pub fn marginal_logpdf(&self, phi: &Phi, x_a: &[f64]) -> Result<f64> {
        if x_a.len() != self.dim_a {
            return Err(Error::DimensionMismatch(format!(
                "constrained block has {} coordinates, expected {}",
                x_a.len(),
                self.dim_a
            )));
        }
        Ok(x_a.iter().map(|&x| phi.logpdf_scalar(x)).sum())
    }

    /// n i.i.d. draws of the constrained block.
    pub fn sample_marginal<R: Rng>(&self, phi: &Phi, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..self.dim_a).map(|_| phi.draw_scalar(rng)).collect())
            .collect()
    }
}

/// Draw (location, scale^2) from a normal-inverse-chi-squared law:
/// scale^2 ~ v0 sigma0^2 / chi2_v0, location | scale^2 ~ N(mu0, scale^2/k0).
pub fn draw_nix<R: Rng>(mu0: f64, k0: f64, v0: f64, sigma0_sq: f64, rng: &mut R) -> (f64, f64) {
    let chi: f64 = ChiSquared::new(v0).unwrap().sample(rng);
    let scale_sq = v0 * sigma0_sq / chi;
    // Tiny degrees of freedom overflow f64; hand the caller something it can
    // reject through validation instead of panicking.
    let sd = (scale_sq / k0).sqrt();
    if !sd.is_finite() {
        return (f64::INFINITY, scale_sq);
    }
    let loc = Normal::new(mu0, sd).unwrap().sample(rng);
    (loc, scale_sq)
}

/// Everything the phi update needs besides phi itself. The centering term is
/// a closure so this module stays independent of the centering types; the
/// caller states whether the centering actually depends on phi, which decides
/// between the conjugate exact draw and Metropolis.
pub struct PhiUpdate<'a> {
    pub constraint: &'a MarginalConstraint,
    pub data_xa: &'a [Vec<f64>],
    pub centering_phi_free: bool,
    pub centering_loglik: &'a dyn Fn(&Phi) -> Result<f64>,
    pub shared_var: Option<f64>,
    pub force_metropolis: bool,
}

/// One Markov transition invariant for the phi conditional: prior times the
/// marginal likelihood of the constrained coordinates times the centering
/// terms of observations and rejected proposals. Dirac priors return phi
/// unchanged; conjugate (family, prior) pairs with a phi-free centering use
/// an exact draw; everything else takes a random-walk Metropolis step on an
/// unconstrained reparameterization.
pub fn update_phi<R: Rng>(
    u: &PhiUpdate,
    phi: &Phi,
    step: &mut RwStep,
    adapt: bool,
    rng: &mut R,
) -> Result<Phi> {
    let c = u.constraint;
    if c.phi_prior.is_dirac() {
        return Ok(*phi);
    }
    let flat: Vec<f64> = u.data_xa.iter().flatten().cloned().collect();
    if u.centering_phi_free && !u.force_metropolis {
        match (&c.phi_prior, c.family) {
            (PriorSpec::NormalInvChiSq { mu0, k0, v0, sigma0_sq }, ConstraintFamily::Gaussian) => {
                let (m, v) = nix_posterior_draw(*mu0, *k0, *v0, *sigma0_sq, &flat, rng);
                return Ok(Phi::Gaussian { mean: m, var: v });
            }
            (PriorSpec::NormalInvChiSq { mu0, k0, v0, sigma0_sq }, ConstraintFamily::Lognormal) => {
                let logs: Vec<f64> = flat.iter().map(|x| x.ln()).collect();
                let (m, v) = nix_posterior_draw(*mu0, *k0, *v0, *sigma0_sq, &logs, rng);
                return Ok(Phi::Lognormal { mu: m, sigma_sq: v });
            }
            (PriorSpec::Gamma { shape, rate }, ConstraintFamily::Exponential) => {
                let n = flat.len() as f64;
                let s: f64 = flat.iter().sum();
                let r = GammaDist::new(shape + n, 1.0 / (rate + s)).unwrap().sample(rng);
                return Ok(Phi::Exponential { rate: r });
            }
            (PriorSpec::NormalGivenVariance { mu0, k0 }, ConstraintFamily::Gaussian) => {
                let var = u.shared_var.ok_or_else(|| {
                    Error::InvalidParameter("shared variance missing for phi update".into())
                })?;
                let n = flat.len() as f64;
                let s: f64 = flat.iter().sum();
                let post_mean = (k0 * mu0 + s) / (k0 + n);
                let post_sd = (var / (k0 + n)).sqrt();
                let mean = Normal::new(post_mean, post_sd).unwrap().sample(rng);
                return Ok(Phi::Gaussian { mean, var });
            }
            _ => {}
        }
    }
    metropolis_phi(u, phi, step, adapt, rng)
}

/// Exact normal-inverse-chi-squared posterior draw given Gaussian data.
fn nix_posterior_draw<R: Rng>(
    mu0: f64,
    k0: f64,
    v0: f64,
    sigma0_sq: f64,
    data: &[f64],
    rng: &mut R,
) -> (f64, f64) {
    let n = data.len() as f64;
    if data.is_empty() {
        return draw_nix(mu0, k0, v0, sigma0_sq, rng);
    }
    let mean = data.iter().sum::<f64>() / n;
    let ss: f64 = data.iter().map(|x| (x - mean) * (x - mean)).sum();
    let kn = k0 + n;
    let mun = (k0 * mu0 + n * mean) / kn;
    let vn = v0 + n;
    let vn_sn =
        v0 * sigma0_sq + ss + k0 * n * (mean - mu0) * (mean - mu0) / kn;
    let chi: f64 = ChiSquared::new(vn).unwrap().sample(rng);
    let var = vn_sn / chi;
    let loc = Normal::new(mun, (var / kn).sqrt()).unwrap().sample(rng);
    (loc, var)
}

/// Transformed coordinates for the Metropolis phi update: locations move
/// unchanged, positive scales move on the log scale with the Jacobian folded
/// into the target.
fn metropolis_phi<R: Rng>(
    u: &PhiUpdate,
    phi: &Phi,
    step: &mut RwStep,
    adapt: bool,
    rng: &mut R,
) -> Result<Phi> {
    let c = u.constraint;
    let to_coords = |p: &Phi| -> Vec<f64> {
        match p {
            Phi::Gaussian { mean, var } => match c.phi_prior {
                PriorSpec::NormalGivenVariance { .. } => vec![*mean],
                _ => vec![*mean, var.ln()],
            },
            Phi::Lognormal { mu, sigma_sq } => vec![*mu, sigma_sq.ln()],
            Phi::Exponential { rate } => vec![rate.ln()],
        }
    };
    let shared = u.shared_var;
    let from_coords = |z: &[f64]| -> Phi {
        match phi {
            Phi::Gaussian { var, .. } => match c.phi_prior {
                PriorSpec::NormalGivenVariance { .. } => Phi::Gaussian {
                    mean: z[0],
                    var: shared.unwrap_or(*var),
                },
                _ => Phi::Gaussian { mean: z[0], var: z[1].exp() },
            },
            Phi::Lognormal { .. } => Phi::Lognormal { mu: z[0], sigma_sq: z[1].exp() },
            Phi::Exponential { .. } => Phi::Exponential { rate: z[0].exp() },
        }
    };
    // log Jacobian of the inverse transform: +z for every log-scale coord.
    let log_jacobian = |z: &[f64]| -> f64 {
        match phi {
            Phi::Gaussian { .. } => match c.phi_prior {
                PriorSpec::NormalGivenVariance { .. } => 0.0,
                _ => z[1],
            },
            Phi::Lognormal { .. } => z[1],
            Phi::Exponential { .. } => z[0],
        }
    };
    let target = |z: &[f64]| -> Result<f64> {
        let cand = from_coords(z);
        if cand.validate().is_err() {
            return Ok(f64::NEG_INFINITY);
        }
        let mut lt = c.phi_log_prior(&cand, u.shared_var)?;
        for row in u.data_xa {
            lt += c.marginal_logpdf(&cand, row)?;
        }
        lt += (u.centering_loglik)(&cand)?;
        Ok(lt + log_jacobian(z))
    };

    let mut coords = to_coords(phi);
    if step.len() != coords.len() {
        *step = RwStep::new(coords.len(), 0.3);
    }
    let mut current_lt = target(&coords)?;
    for i in 0..coords.len() {
        let snapshot = coords.clone();
        let lt_fn = |v: f64| {
            let mut cand = snapshot.clone();
            cand[i] = v;
            target(&cand).unwrap_or(f64::NEG_INFINITY)
        };
        let (nv, nlt, accepted) = mh_step(coords[i], current_lt, step.size(i), lt_fn, rng);
        coords[i] = nv;
        current_lt = nlt;
        step.record(i, accepted, adapt);
    }
    Ok(from_coords(&coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn gaussian_dirac(mean: f64, var: f64) -> MarginalConstraint {
        MarginalConstraint::new(
            ConstraintFamily::Gaussian,
            PriorSpec::Dirac { phi: Phi::Gaussian { mean, var } },
            1,
        )
        .unwrap()
    }

    #[test]
    fn dirac_prior_returns_phi0() {
        let c = gaussian_dirac(13.0, 1.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let phi = c.sample_phi_prior(None, &mut rng).unwrap();
        assert_eq!(phi, Phi::Gaussian { mean: 13.0, var: 1.0 });
    }

    #[test]
    fn gamma_prior_mean_is_shape_over_rate() {
        let c = MarginalConstraint::new(
            ConstraintFamily::Exponential,
            PriorSpec::Gamma { shape: 0.1, rate: 0.1 },
            1,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| match c.sample_phi_prior(None, &mut rng).unwrap() {
                Phi::Exponential { rate } => rate,
                _ => unreachable!(),
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {}", mean);
    }

    #[test]
    fn nix_scale_marginal_matches_transform_oracle_quantiles() {
        // scale^2 ~ v0 sigma0^2 / chi2_v0. Check sample quantiles against the
        // inverse-CDF transform at parameters where f64 can represent them.
        use statrs::distribution::{ChiSquared as ChiSq, ContinuousCDF};
        let (mu0, k0, v0, s0) = (-10.0, 0.01, 5.0, 5.0);
        let c = MarginalConstraint::new(
            ConstraintFamily::Gaussian,
            PriorSpec::NormalInvChiSq { mu0, k0, v0, sigma0_sq: s0 },
            1,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 100_000;
        let mut vars: Vec<f64> = (0..n)
            .map(|_| match c.sample_phi_prior(None, &mut rng).unwrap() {
                Phi::Gaussian { var, .. } => var,
                _ => unreachable!(),
            })
            .collect();
        vars.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let chi = ChiSq::new(v0).unwrap();
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let emp = vars[(q * n as f64) as usize];
            let oracle = v0 * s0 / chi.inverse_cdf(1.0 - q);
            assert!(
                (emp / oracle - 1.0).abs() < 0.05,
                "q={}: {} vs {}",
                q,
                emp,
                oracle
            );
        }
    }

    #[test]
    fn extreme_nix_prior_draws_do_not_panic() {
        // The weakly informative prior from the experiments has v0 = 0.001;
        // its scale draws routinely overflow f64. Drawing must not panic and
        // must produce something (possibly infinite) the caller can validate.
        let c = MarginalConstraint::new(
            ConstraintFamily::Lognormal,
            PriorSpec::NormalInvChiSq { mu0: -10.0, k0: 0.01, v0: 0.001, sigma0_sq: 5.0 },
            1,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..100 {
            let _ = c.sample_phi_prior(None, &mut rng).unwrap();
        }
    }

    #[test]
    fn gaussian_logpdf_at_mean() {
        let phi = Phi::Gaussian { mean: 13.0, var: 1.0 };
        assert!((phi.logpdf_scalar(13.0) + 0.5 * LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn exponential_logpdf_closed_form() {
        let phi = Phi::Exponential { rate: 2.0 };
        assert!((phi.logpdf_scalar(0.5) - (2.0f64.ln() - 1.0)).abs() < 1e-12);
        assert_eq!(phi.logpdf_scalar(0.0), f64::NEG_INFINITY);
        assert_eq!(phi.logpdf_scalar(-1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn lognormal_logpdf_at_one() {
        let phi = Phi::Lognormal { mu: 0.0, sigma_sq: 1.0 };
        assert!((phi.logpdf_scalar(1.0) + 0.5 * LN_2PI).abs() < 1e-12);
        assert_eq!(phi.logpdf_scalar(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn sample_marginal_empty_and_moments() {
        let c = gaussian_dirac(13.0, 1.0);
        let phi = Phi::Gaussian { mean: 13.0, var: 1.0 };
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        assert!(c.sample_marginal(&phi, 0, &mut rng).is_empty());
        let n = 100_000;
        let draws = c.sample_marginal(&phi, n, &mut rng);
        let mean = draws.iter().map(|r| r[0]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 13.0).abs() < 0.02, "mean {}", mean);
        assert!((var - 1.0).abs() < 0.03, "var {}", var);
    }

    #[test]
    fn exponential_draws_pass_ks_against_cdf() {
        let c = MarginalConstraint::new(
            ConstraintFamily::Exponential,
            PriorSpec::Dirac { phi: Phi::Exponential { rate: 2.0 } },
            1,
        )
        .unwrap();
        let phi = Phi::Exponential { rate: 2.0 };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 100_000;
        let mut xs: Vec<f64> = c
            .sample_marginal(&phi, n, &mut rng)
            .into_iter()
            .map(|r| r[0])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut d = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            let f = 1.0 - (-2.0 * x).exp();
            let e_hi = (i + 1) as f64 / n as f64;
            let e_lo = i as f64 / n as f64;
            d = d.max((f - e_lo).abs()).max((e_hi - f).abs());
        }
        // alpha = 0.01 asymptotic critical value.
        assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {}", d);
    }

    #[test]
    fn moments_match_closed_forms() {
        let (m, s) = Phi::Exponential { rate: 2.0 }.moments().unwrap();
        assert_eq!((m, s), (0.5, 0.5));
        let (m, s) = Phi::Lognormal { mu: 0.0, sigma_sq: 1.0 }.moments().unwrap();
        assert!((m - 0.5f64.exp()).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((s * s - (e - 1.0) * e).abs() < 1e-12);
        let (m, s) = Phi::Gaussian { mean: 2.0, var: 9.0 }.moments().unwrap();
        assert_eq!((m, s), (2.0, 3.0));
    }

    #[test]
    fn marginal_density_integrates_to_one() {
        // Trapezoid over a range covering essentially all mass.
        let cases = vec![
            (Phi::Gaussian { mean: 13.0, var: 1.0 }, 5.0, 21.0),
            (Phi::Lognormal { mu: 0.0, sigma_sq: 1.0 }, 1e-9, 120.0),
            (Phi::Exponential { rate: 2.0 }, 1e-9, 15.0),
        ];
        for (phi, lo, hi) in cases {
            let n = 200_000;
            let h = (hi - lo) / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                total += w * phi.logpdf_scalar(x).exp();
            }
            total *= h;
            assert!((total - 1.0).abs() < 1e-3, "{:?}: integral {}", phi, total);
        }
    }

    #[test]
    fn dirac_update_returns_phi_unchanged() {
        let c = gaussian_dirac(13.0, 1.0);
        let phi = Phi::Gaussian { mean: 13.0, var: 1.0 };
        let mut step = RwStep::new(2, 0.3);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let u = PhiUpdate {
            constraint: &c,
            data_xa: &[vec![12.0], vec![14.0]],
            centering_phi_free: true,
            centering_loglik: &|_| Ok(0.0),
            shared_var: None,
            force_metropolis: false,
        };
        let out = update_phi(&u, &phi, &mut step, false, &mut rng).unwrap();
        assert_eq!(out, phi);
    }

    #[test]
    fn exponential_gamma_conjugate_update_matches_posterior() {
        // phi-free centering, Gamma(a, b) prior, data sum S over n points:
        // draws must match Gamma(a + n, b + S) moments.
        let c = MarginalConstraint::new(
            ConstraintFamily::Exponential,
            PriorSpec::Gamma { shape: 2.0, rate: 3.0 },
            1,
        )
        .unwrap();
        let data = vec![vec![0.5], vec![1.5], vec![0.25], vec![2.0]];
        let (a, b) = (2.0 + 4.0, 3.0 + 4.25);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut step = RwStep::new(1, 0.3);
        let u = PhiUpdate {
            constraint: &c,
            data_xa: &data,
            centering_phi_free: true,
            centering_loglik: &|_| Ok(0.0),
            shared_var: None,
            force_metropolis: false,
        };
        let n = 200_000;
        let phi0 = Phi::Exponential { rate: 1.0 };
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            match update_phi(&u, &phi0, &mut step, false, &mut rng).unwrap() {
                Phi::Exponential { rate } => {
                    sum += rate;
                    sum2 += rate * rate;
                }
                _ => unreachable!(),
            }
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!((mean - a / b).abs() < 0.01, "mean {} vs {}", mean, a / b);
        assert!((var - a / (b * b)).abs() < 0.01, "var {}", var);
    }

    #[test]
    fn forced_metropolis_matches_conjugate_long_run() {
        // Same target as the conjugate case, sampled with the Metropolis
        // path: long-run mean within 2% of the exact posterior mean.
        let c = MarginalConstraint::new(
            ConstraintFamily::Exponential,
            PriorSpec::Gamma { shape: 2.0, rate: 3.0 },
            1,
        )
        .unwrap();
        let data = vec![vec![0.5], vec![1.5], vec![0.25], vec![2.0]];
        let (a, b) = (2.0 + 4.0, 3.0 + 4.25);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut step = RwStep::new(1, 0.3);
        let u = PhiUpdate {
            constraint: &c,
            data_xa: &data,
            centering_phi_free: true,
            centering_loglik: &|_| Ok(0.0),
            shared_var: None,
            force_metropolis: true,
        };
        let mut phi = Phi::Exponential { rate: 1.0 };
        // Adapt during a burn-in, then freeze.
        for _ in 0..2_000 {
            phi = update_phi(&u, &phi, &mut step, true, &mut rng).unwrap();
        }
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            phi = update_phi(&u, &phi, &mut step, false, &mut rng).unwrap();
            match phi {
                Phi::Exponential { rate } => sum += rate,
                _ => unreachable!(),
            }
        }
        let mean = sum / n as f64;
        assert!(
            (mean / (a / b) - 1.0).abs() < 0.02,
            "mean {} vs {}",
            mean,
            a / b
        );
    }
}
