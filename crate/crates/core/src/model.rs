//! The assembled model: marginal constraint, centering conditional, GP
//! perturbation settings, and the test hooks that pin the latent function.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::centering::{CenteringModel, CenteringParams, CenteringVariant};
use crate::constraints::{ConstraintFamily, MarginalConstraint, Phi, PriorSpec};
use crate::error::{Error, Result};
use crate::kernel::KernelParams;

/// How the latent function is obtained during simulation and evaluation.
/// `Gp` is the model; the other two pin lambda for tests and diagnostics
/// (constant, or an arbitrary deterministic function of location), in which
/// case no GP is instantiated.
#[derive(Clone)]
pub enum LambdaMode {
    Gp,
    Fixed(f64),
    Deterministic(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaMode::Gp => write!(f, "Gp"),
            LambdaMode::Fixed(c) => write!(f, "Fixed({})", c),
            LambdaMode::Deterministic(_) => write!(f, "Deterministic(..)"),
        }
    }
}

impl LambdaMode {
    pub fn is_gp(&self) -> bool {
        matches!(self, LambdaMode::Gp)
    }

    pub fn value_at(&self, location: &[f64]) -> Option<f64> {
        match self {
            LambdaMode::Gp => None,
            LambdaMode::Fixed(c) => Some(*c),
            LambdaMode::Deterministic(f) => Some(f(location)),
        }
    }
}

/// Optional per-axis affine standardization of GP locations. The kernel
/// stays isotropic; this rescales the space it measures distances in.
#[derive(Clone, Debug)]
pub struct LocationMap {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LocationMap {
    pub fn from_data(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if d == 0 || rows.len() < 2 {
            return Err(Error::Data(
                "standardization needs at least two rows".into(),
            ));
        }
        let n = rows.len() as f64;
        let mut center = vec![0.0; d];
        for r in rows {
            for (c, v) in center.iter_mut().zip(r) {
                *c += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for r in rows {
            for ((s, c), v) in scale.iter_mut().zip(&center).zip(r) {
                *s += (v - c) * (v - c) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = s.sqrt().max(1e-12);
        }
        Ok(LocationMap { center, scale })
    }

    pub fn apply(&self, loc: &mut [f64]) {
        for ((v, c), s) in loc.iter_mut().zip(&self.center).zip(&self.scale) {
            *v = (*v - c) / s;
        }
    }
}

/// A fully specified model. `constraint: None` is the unconstrained
/// baseline: the centering is a joint density over all coordinates and the
/// joint law is proportional to pi0(x) sigma(lambda(x)).
#[derive(Clone, Debug)]
pub struct Model {
    pub constraint: Option<MarginalConstraint>,
    pub centering: CenteringModel,
    pub kernel: KernelParams,
    pub gp_mean: f64,
    pub dim_ac: usize,
    pub location_map: Option<LocationMap>,
    pub lambda_mode: LambdaMode,
}

impl Model {
    pub fn dim_a(&self) -> usize {
        self.constraint.as_ref().map(|c| c.dim_a).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.dim_a() + self.dim_ac
    }

    pub fn is_unconstrained(&self) -> bool {
        self.constraint.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if let Some(c) = &self.constraint {
            c.validate()?;
        }
        if self.dim_ac == 0 {
            return Err(Error::InvalidParameter(
                "model needs at least one unconstrained coordinate".into(),
            ));
        }
        if !self.gp_mean.is_finite() {
            return Err(Error::InvalidParameter("gp mean must be finite".into()));
        }
        match self.centering.variant {
            CenteringVariant::Independent => {
                // Works constrained or unconstrained, any dimensions.
            }
            variant => {
                let c = self.constraint.as_ref().ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "{:?} centering requires a marginal constraint",
                        variant
                    ))
                })?;
                if c.dim_a != 1 || self.dim_ac != 1 {
                    return Err(Error::Unsupported(format!(
                        "{:?} centering is defined for one constrained and one unconstrained \
                         coordinate; use the independent centering otherwise",
                        variant
                    )));
                }
                match variant {
                    CenteringVariant::ConditionalNormal => {
                        if c.family != ConstraintFamily::Gaussian {
                            return Err(Error::InvalidParameter(
                                "conditional_normal centering needs a Gaussian constraint".into(),
                            ));
                        }
                    }
                    CenteringVariant::SharedVariance => {
                        if c.family != ConstraintFamily::Gaussian
                            || !matches!(c.phi_prior, PriorSpec::NormalGivenVariance { .. })
                        {
                            return Err(Error::InvalidParameter(
                                "shared_variance centering needs a Gaussian constraint with a \
                                 normal_given_variance prior on its mean"
                                    .into(),
                            ));
                        }
                    }
                    _ => {}
                }
            }
        }
        if matches!(
            self.constraint.as_ref().map(|c| &c.phi_prior),
            Some(PriorSpec::NormalGivenVariance { .. })
        ) && self.centering.variant != CenteringVariant::SharedVariance
        {
            return Err(Error::InvalidParameter(
                "normal_given_variance prior is only meaningful with shared_variance centering"
                    .into(),
            ));
        }
        Ok(())
    }

    /// GP location for a (constrained, unconstrained) pair: concatenation,
    /// then the optional per-axis standardization.
    pub fn location(&self, x_a: &[f64], x_ac: &[f64]) -> Vec<f64> {
        let mut loc = Vec::with_capacity(x_a.len() + x_ac.len());
        loc.extend_from_slice(x_a);
        loc.extend_from_slice(x_ac);
        if let Some(map) = &self.location_map {
            map.apply(&mut loc);
        }
        loc
    }

    /// The phi actually governing the marginal: under shared variance the
    /// variance component tracks theta's scale.
    pub fn effective_phi(&self, theta: &CenteringParams, phi: Option<Phi>) -> Option<Phi> {
        match (self.centering.variant, phi, theta) {
            (
                CenteringVariant::SharedVariance,
                Some(Phi::Gaussian { mean, .. }),
                CenteringParams::Correlated { scale_sq, .. },
            ) => Some(Phi::Gaussian { mean, var: *scale_sq }),
            (_, p, _) => p,
        }
    }

    /// Draw (theta, phi) from the prior; theta first so a shared-variance phi
    /// prior can condition on the drawn scale.
    pub fn sample_params_prior<R: Rng>(
        &self,
        rng: &mut R,
    ) -> Result<(CenteringParams, Option<Phi>)> {
        let theta = self.centering.sample_theta_prior(self.dim_ac, rng);
        let phi = match &self.constraint {
            None => None,
            Some(c) => {
                let shared = match (&self.centering.variant, &theta) {
                    (CenteringVariant::SharedVariance, CenteringParams::Correlated { scale_sq, .. }) => {
                        Some(*scale_sq)
                    }
                    _ => None,
                };
                let phi = c.sample_phi_prior(shared, rng)?;
                phi.validate().map_err(|_| {
                    Error::Numeric(format!(
                        "phi prior draw is not finite ({:?}); the prior is too diffuse for \
                         forward simulation",
                        phi
                    ))
                })?;
                Some(phi)
            }
        };
        Ok((theta, phi))
    }
}
