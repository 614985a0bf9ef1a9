//! Run configuration: a flat, versioned JSON document. Unknown keys are
//! hard errors; silent typos in prior hyperparameters are the dominant user
//! error.

use serde::{Deserialize, Serialize};

use crate::centering::{CenteringModel, CenteringVariant, NiguPrior};
use crate::constraints::{ConstraintFamily, MarginalConstraint, Phi, PriorSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::model::{LambdaMode, Model};
use crate::posterior::{HmcConfig, LengthscalePrior, McmcConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: String,
    pub constrained: Vec<usize>,
    #[serde(default)]
    pub test_path: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub family: ConstraintFamily,
    pub prior: PriorSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenteringConfig {
    pub variant: CenteringVariant,
    pub prior: NiguPrior,
}

fn default_signal_variance() -> f64 {
    1.0
}

fn default_log_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthscalePriorConfig {
    /// Log of the prior median; defaults to the log median pairwise
    /// distance of the training observations.
    #[serde(default)]
    pub log_location: Option<f64>,
    #[serde(default = "default_log_scale")]
    pub log_scale: f64,
}

impl Default for LengthscalePriorConfig {
    fn default() -> Self {
        LengthscalePriorConfig { log_location: None, log_scale: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    #[serde(default = "default_signal_variance")]
    pub signal_variance: f64,
    #[serde(default)]
    pub mean: f64,
    /// Defaults to 1e-8 times the signal variance.
    #[serde(default)]
    pub jitter: Option<f64>,
    /// Standardize GP locations per axis using training moments.
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub lengthscale_prior: LengthscalePriorConfig,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            signal_variance: 1.0,
            mean: 0.0,
            jitter: None,
            standardize: false,
            lengthscale_prior: LengthscalePriorConfig::default(),
        }
    }
}

fn default_thin() -> usize {
    1
}

fn default_round_cap() -> usize {
    crate::prior_sim::DEFAULT_ROUND_CAP
}

fn default_probe_grid() -> usize {
    6
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McmcSection {
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_round_cap")]
    pub round_cap: usize,
    #[serde(default)]
    pub hmc: HmcConfig,
    #[serde(default = "default_true")]
    pub update_lengthscale: bool,
    #[serde(default)]
    pub force_metropolis_phi: bool,
    /// Per-axis subgrid resolution for the lambda probe set (plus the region
    /// midpoint).
    #[serde(default = "default_probe_grid")]
    pub probe_grid: usize,
    /// Explicit probe locations override the subgrid.
    #[serde(default)]
    pub probes: Option<Vec<Vec<f64>>>,
}

fn default_grid_points() -> Vec<usize> {
    vec![64, 64]
}

fn default_region_pad() -> f64 {
    0.25
}

fn default_quad_points() -> usize {
    128
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_grid_points")]
    pub grid_points: Vec<usize>,
    #[serde(default = "default_region_pad")]
    pub region_pad: f64,
    /// Explicit [lo, hi] per axis; overrides the padded data bounding box.
    #[serde(default)]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub conditional_mean: bool,
    /// Cap on posterior samples used for quadrature-heavy evaluation
    /// (0 = all).
    #[serde(default)]
    pub max_eval_samples: usize,
    /// Nodes for per-observation normalizer quadrature in held-out scoring.
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid_points: default_grid_points(),
            region_pad: default_region_pad(),
            bounds: None,
            conditional_mean: false,
            max_eval_samples: 0,
            quad_points: default_quad_points(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub output: String,
    pub data: DataConfig,
    /// Absent for the fully unconstrained baseline.
    #[serde(default)]
    pub constraint: Option<ConstraintConfig>,
    pub centering: CenteringConfig,
    #[serde(default)]
    pub gp: GpConfig,
    pub mcmc: McmcSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub split: Option<SplitConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    /// Fit the unconstrained variant of this model (the constraint is
    /// dropped; the constrained indices still name the scored coordinates).
    #[serde(default)]
    pub baseline: bool,
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("cannot parse config: {}", e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {})",
                self.version, CONFIG_VERSION
            )));
        }
        if self.data.constrained.is_empty() && self.constraint.is_some() {
            return Err(Error::Config(
                "a constraint is declared but no constrained column indices are given".into(),
            ));
        }
        if self.constraint.is_none() && !self.baseline {
            return Err(Error::Config(
                "no constraint section: set \"baseline\": true to fit the unconstrained model"
                    .into(),
            ));
        }
        if let Some(c) = &self.constraint {
            MarginalConstraint::new(c.family, c.prior, self.data.constrained.len().max(1))?;
        }
        self.centering.prior.validate()?;
        if self.mcmc.iterations <= self.mcmc.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.mcmc.iterations, self.mcmc.burn_in
            )));
        }
        if self.mcmc.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.eval.region_pad >= 0.0) {
            return Err(Error::Config("region_pad must be nonnegative".into()));
        }
        if self.eval.quad_points < 16 {
            return Err(Error::Config("quad_points must be at least 16".into()));
        }
        for &g in &self.eval.grid_points {
            if g < 16 {
                return Err(Error::Config("grid_points must be at least 16 per axis".into()));
            }
        }
        if let Some(b) = &self.eval.bounds {
            for [lo, hi] in b {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Config("eval bounds must be finite and ordered".into()));
                }
            }
        }
        Ok(())
    }

    /// Assemble the model for a dataset of the given dimension. The
    /// standardization map, if requested, is attached later from training
    /// moments.
    pub fn build_model(&self, data_dim: usize) -> Result<Model> {
        let dim_a = self.data.constrained.len();
        for &c in &self.data.constrained {
            if c >= data_dim {
                return Err(Error::Config(format!(
                    "constrained index {} out of range for {} columns",
                    c, data_dim
                )));
            }
        }
        if dim_a >= data_dim {
            return Err(Error::Config(
                "at least one coordinate must be unconstrained".into(),
            ));
        }
        let constraint = match (&self.constraint, self.baseline) {
            (_, true) | (None, _) => None,
            (Some(c), false) => Some(MarginalConstraint::new(c.family, c.prior, dim_a)?),
        };
        let centering = if self.baseline {
            CenteringModel::new(CenteringVariant::Independent, self.centering.prior)?
        } else {
            CenteringModel::new(self.centering.variant, self.centering.prior)?
        };
        let mut kernel = KernelParams::new(self.gp.signal_variance, 1.0)?;
        if let Some(j) = self.gp.jitter {
            kernel = kernel.with_jitter(j)?;
        }
        let dim_ac = if constraint.is_some() { data_dim - dim_a } else { data_dim };
        let model = Model {
            constraint,
            centering,
            kernel,
            gp_mean: self.gp.mean,
            dim_ac,
            location_map: None,
            lambda_mode: LambdaMode::Gp,
        };
        model.validate()?;
        Ok(model)
    }

    /// The sampler settings; the lengthscale prior location still needs
    /// resolving against the data when left null.
    pub fn build_mcmc(&self) -> McmcConfig {
        McmcConfig {
            iterations: self.mcmc.iterations,
            burn_in: self.mcmc.burn_in,
            thin: self.mcmc.thin,
            round_cap: self.mcmc.round_cap,
            hmc: self.mcmc.hmc,
            lengthscale_prior: LengthscalePrior {
                log_location: self.gp.lengthscale_prior.log_location.unwrap_or(0.0),
                log_scale: self.gp.lengthscale_prior.log_scale,
            },
            update_lengthscale: self.mcmc.update_lengthscale,
            probes: self.mcmc.probes.clone().unwrap_or_default(),
            force_metropolis_phi: self.mcmc.force_metropolis_phi,
            archive_samples: true,
        }
    }
}

/// Bundled experiment recipes. The synthetic recipes also generate their
/// datasets; the real-data recipes emit a config with a placeholder path
/// and document the expected schema.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipe {
    Synthetic1,
    Synthetic2,
    Pm25,
    Earthquake,
}

impl std::str::FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic1" => Ok(Recipe::Synthetic1),
            "synthetic2" => Ok(Recipe::Synthetic2),
            "pm25" => Ok(Recipe::Pm25),
            "earthquake" => Ok(Recipe::Earthquake),
            other => Err(Error::Config(format!(
                "unknown recipe '{}'; available: synthetic1, synthetic2, pm25, earthquake",
                other
            ))),
        }
    }
}

/// Sample the synthetic-1 truth: an equal mixture of two Gaussians sharing
/// the N(13, 1) first marginal, with correlated second coordinates at
/// means -20 and 20 and variance 20.
pub fn synthetic1_truth(n: usize, seed: u64) -> Dataset {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = crate::rng::RngKey::root(seed).child(crate::rng::domain::SIM).rng();
    let cov12 = 3.0 * 5.0f64.sqrt() / 5.0; // correlation 0.3 against var 20
    let rows = (0..n)
        .map(|_| {
            let up: bool = rng.gen();
            let mu2 = if up { 20.0 } else { -20.0 };
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let x1 = 13.0 + z1;
            // Conditional of the component: mean mu2 + cov12 (x1 - 13),
            // variance 20 - cov12^2.
            let x2 = mu2 + cov12 * z1 + (20.0 - cov12 * cov12).sqrt() * z2;
            vec![x1, x2]
        })
        .collect();
    Dataset { columns: vec!["x1".into(), "x2".into()], rows }
}

/// Sample the synthetic-2 truth: a single bivariate normal with equal
/// marginal variances.
pub fn synthetic2_truth(n: usize, seed: u64) -> Dataset {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = crate::rng::RngKey::root(seed).child(crate::rng::domain::SIM).rng();
    let (s11, s12, s22) = (20.0f64, 6.0, 20.0);
    let rows = (0..n)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let x1 = 13.0 + s11.sqrt() * z1;
            let x2 = -5.0 + s12 / s11.sqrt() * z1 + (s22 - s12 * s12 / s11).sqrt() * z2;
            vec![x1, x2]
        })
        .collect();
    Dataset { columns: vec!["x1".into(), "x2".into()], rows }
}

fn nigu_paper() -> NiguPrior {
    NiguPrior { mu0: 0.0, k0: 0.001, alpha0: 0.001, beta0: 0.001 }
}

/// Build the recipe's config plus, for the synthetic recipes, generated
/// train/test datasets.
pub fn recipe_config(
    recipe: Recipe,
    n_train: Option<usize>,
    seed: u64,
) -> (RunConfig, Option<(Dataset, Dataset)>) {
    let mcmc = McmcSection {
        iterations: 5000,
        burn_in: 1000,
        thin: 1,
        round_cap: default_round_cap(),
        hmc: HmcConfig::default(),
        update_lengthscale: true,
        force_metropolis_phi: false,
        probe_grid: default_probe_grid(),
        probes: None,
    };
    match recipe {
        Recipe::Synthetic1 => {
            let n = n_train.unwrap_or(100);
            let train = synthetic1_truth(n, seed);
            let test = synthetic1_truth(60, seed.wrapping_add(1));
            let cfg = RunConfig {
                version: CONFIG_VERSION,
                seed,
                output: "out/synthetic1".into(),
                data: DataConfig {
                    path: "train.csv".into(),
                    constrained: vec![0],
                    test_path: Some("test.csv".into()),
                },
                constraint: Some(ConstraintConfig {
                    family: ConstraintFamily::Gaussian,
                    prior: PriorSpec::Dirac { phi: Phi::Gaussian { mean: 13.0, var: 1.0 } },
                }),
                centering: CenteringConfig {
                    variant: CenteringVariant::ConditionalNormal,
                    prior: nigu_paper(),
                },
                gp: GpConfig::default(),
                mcmc,
                eval: EvalConfig::default(),
                split: None,
                simulate: None,
                baseline: false,
            };
            (cfg, Some((train, test)))
        }
        Recipe::Synthetic2 => {
            let n = n_train.unwrap_or(15);
            let train = synthetic2_truth(n, seed);
            let test = synthetic2_truth(15, seed.wrapping_add(1));
            let cfg = RunConfig {
                version: CONFIG_VERSION,
                seed,
                output: "out/synthetic2".into(),
                data: DataConfig {
                    path: "train.csv".into(),
                    constrained: vec![0],
                    test_path: Some("test.csv".into()),
                },
                constraint: Some(ConstraintConfig {
                    family: ConstraintFamily::Gaussian,
                    prior: PriorSpec::NormalGivenVariance { mu0: -10.0, k0: 0.01 },
                }),
                centering: CenteringConfig {
                    variant: CenteringVariant::SharedVariance,
                    prior: nigu_paper(),
                },
                gp: GpConfig::default(),
                mcmc,
                eval: EvalConfig::default(),
                split: None,
                simulate: None,
                baseline: false,
            };
            (cfg, Some((train, test)))
        }
        Recipe::Pm25 => {
            let cfg = RunConfig {
                version: CONFIG_VERSION,
                seed,
                output: "out/pm25".into(),
                data: DataConfig {
                    // Expected schema: header "pm25,temperature"; pm25 (the
                    // constrained column) strictly positive dailies.
                    path: "pm25.csv".into(),
                    constrained: vec![0],
                    test_path: None,
                },
                constraint: Some(ConstraintConfig {
                    family: ConstraintFamily::Lognormal,
                    prior: PriorSpec::NormalInvChiSq {
                        mu0: -10.0,
                        k0: 0.01,
                        v0: 0.001,
                        sigma0_sq: 5.0,
                    },
                }),
                centering: CenteringConfig {
                    variant: CenteringVariant::StandardizedMoments,
                    prior: nigu_paper(),
                },
                gp: GpConfig::default(),
                mcmc,
                eval: EvalConfig::default(),
                split: Some(SplitConfig { train: 296, test: 60 }),
                simulate: None,
                baseline: false,
            };
            (cfg, None)
        }
        Recipe::Earthquake => {
            let cfg = RunConfig {
                version: CONFIG_VERSION,
                seed,
                output: "out/earthquake".into(),
                data: DataConfig {
                    // Expected schema: header "recurrence_time,magnitude";
                    // recurrence times strictly positive.
                    path: "earthquake.csv".into(),
                    constrained: vec![0],
                    test_path: None,
                },
                constraint: Some(ConstraintConfig {
                    family: ConstraintFamily::Exponential,
                    prior: PriorSpec::Gamma { shape: 0.1, rate: 0.1 },
                }),
                centering: CenteringConfig {
                    variant: CenteringVariant::StandardizedMoments,
                    prior: nigu_paper(),
                },
                gp: GpConfig::default(),
                mcmc,
                eval: EvalConfig::default(),
                split: None,
                simulate: None,
                baseline: false,
            };
            (cfg, None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "version": 1,
            "seed": 7,
            "output": "out",
            "data": {"path": "d.csv", "constrained": [0]},
            "constraint": {"family": "gaussian",
                           "prior": {"type": "dirac",
                                     "phi": {"family": "gaussian", "mean": 13.0, "var": 1.0}}},
            "centering": {"variant": "conditional_normal",
                          "prior": {"mu0": 0.0, "k0": 0.001, "alpha0": 0.001, "beta0": 0.001}},
            "mcmc": {"iterations": 100, "burn_in": 10}
        }"#
        .to_string()
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = RunConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mcmc.thin, 1);
        assert_eq!(cfg.eval.grid_points, vec![64, 64]);
        let model = cfg.build_model(2).unwrap();
        assert_eq!(model.dim(), 2);
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let bad = minimal_json().replace("\"seed\": 7,", "\"seed\": 7, \"sede\": 8,");
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("sede"), "{}", err);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let bad = minimal_json().replace("\"version\": 1", "\"version\": 2");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn iterations_must_exceed_burn_in() {
        let bad = minimal_json().replace(
            "\"iterations\": 100, \"burn_in\": 10",
            "\"iterations\": 10, \"burn_in\": 10",
        );
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::from_json(&minimal_json()).unwrap();
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg.to_json(), again.to_json());
    }

    #[test]
    fn synthetic1_recipe_matches_experiment_setup() {
        let (cfg, data) = recipe_config(Recipe::Synthetic1, Some(100), 5);
        assert_eq!(
            cfg.constraint.as_ref().unwrap().prior,
            PriorSpec::Dirac { phi: Phi::Gaussian { mean: 13.0, var: 1.0 } }
        );
        let p = cfg.centering.prior;
        assert_eq!((p.mu0, p.k0, p.alpha0, p.beta0), (0.0, 0.001, 0.001, 0.001));
        assert_eq!(cfg.mcmc.iterations, 5000);
        assert_eq!(cfg.mcmc.burn_in, 1000);
        let (train, test) = data.unwrap();
        assert_eq!(train.len(), 100);
        assert_eq!(test.len(), 60);
        // The truth's first marginal is N(13, 1).
        let big = synthetic1_truth(200_000, 1);
        let mean = big.rows.iter().map(|r| r[0]).sum::<f64>() / big.len() as f64;
        let var = big.rows.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / big.len() as f64;
        assert!((mean - 13.0).abs() < 0.02, "mean {}", mean);
        assert!((var - 1.0).abs() < 0.02, "var {}", var);
        // And the second coordinate is the symmetric mixture at +-20.
        let m2 = big.rows.iter().map(|r| r[1]).sum::<f64>() / big.len() as f64;
        assert!(m2.abs() < 0.2, "mean2 {}", m2);
    }

    #[test]
    fn earthquake_recipe_uses_weak_gamma_prior() {
        let (cfg, data) = recipe_config(Recipe::Earthquake, None, 5);
        assert!(data.is_none());
        assert_eq!(
            cfg.constraint.as_ref().unwrap().prior,
            PriorSpec::Gamma { shape: 0.1, rate: 0.1 }
        );
        assert_eq!(cfg.constraint.as_ref().unwrap().family, ConstraintFamily::Exponential);
    }

    #[test]
    fn baseline_config_builds_unconstrained_model() {
        let json = minimal_json()
            .replace("\"baseline\": false", "")
            .replace("\"constraint\":", "\"baseline\": true, \"constraint\":");
        let cfg = RunConfig::from_json(&json).unwrap();
        let model = cfg.build_model(2).unwrap();
        assert!(model.constraint.is_none());
        assert_eq!(model.dim_ac, 2);
    }
}
