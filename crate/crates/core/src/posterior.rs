//! Exact data-augmentation Gibbs sampler over (rejected sets, lambda, phi,
//! theta, lengthscale).
//!
//! The posterior's likelihood carries an intractable normalizer per
//! observation, so it is doubly intractable for standard Metropolis
//! schemes. Instantiating the rejected rejection-sampling proposals as
//! latent variables makes every conditional tractable: rejected sets are
//! redrawn by rerunning the proposal loop at fixed constrained coordinates
//! (discarding the accepted draw), lambda gets an elliptical slice
//! transition against its Bernoulli classification likelihood, phi and theta
//! get conjugate or Metropolis-within-Gibbs moves, and the kernel
//! lengthscale moves by Hamiltonian Monte Carlo on its log. No step ever
//! evaluates the normalizer.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::centering::{update_theta, CenteringParams, ThetaUpdate};
use crate::constraints::{update_phi, Phi, PhiUpdate};
use crate::error::{Error, Result};
use crate::gp::GpRealization;
use crate::mh::RwStep;
use crate::model::Model;
use crate::prior_sim::{log1m_sigmoid, log_sigmoid, rejection_rounds};
use crate::rng::{domain, RngKey};

/// Observations as the sampler sees them: constrained and unconstrained
/// blocks per row (the constrained block is empty in baseline mode).
#[derive(Clone, Debug, Default)]
pub struct ObsData {
    pub xa: Vec<Vec<f64>>,
    pub xac: Vec<Vec<f64>>,
}

impl ObsData {
    pub fn len(&self) -> usize {
        self.xa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xa.is_empty()
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.xa.len() != self.xac.len() {
            return Err(Error::Data("mismatched block counts".into()));
        }
        for (i, (xa, xac)) in self.xa.iter().zip(&self.xac).enumerate() {
            if xa.len() != model.dim_a() || xac.len() != model.dim_ac {
                return Err(Error::Data(format!(
                    "row {}: expected {} constrained and {} unconstrained coordinates",
                    i,
                    model.dim_a(),
                    model.dim_ac
                )));
            }
            if let (Some(c), true) = (&model.constraint, !xa.is_empty()) {
                let _ = c;
                for (j, v) in xa.iter().enumerate() {
                    if !v.is_finite() || !phi_support_ok(model, *v) {
                        return Err(Error::Data(format!(
                            "row {}: constrained coordinate {} = {} outside the family support",
                            i, j, v
                        )));
                    }
                }
            }
            for v in xac {
                if !v.is_finite() {
                    return Err(Error::Data(format!("row {}: non-finite coordinate", i)));
                }
            }
        }
        Ok(())
    }
}

fn phi_support_ok(model: &Model, x: f64) -> bool {
    use crate::constraints::ConstraintFamily::*;
    match model.constraint.as_ref().map(|c| c.family) {
        Some(Lognormal) | Some(Exponential) => x > 0.0,
        _ => x.is_finite(),
    }
}

/// Hamiltonian Monte Carlo settings for the lengthscale update.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig { step_size: 0.15, leapfrog_steps: 3 }
    }
}

/// Lognormal prior on the lengthscale, expressed on log l where it is
/// normal. The location defaults to the log median pairwise distance of the
/// observations, resolved before the chain starts.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LengthscalePrior {
    pub log_location: f64,
    pub log_scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub round_cap: usize,
    pub hmc: HmcConfig,
    pub lengthscale_prior: LengthscalePrior,
    /// Fixed-lengthscale mode skips the HMC update entirely.
    pub update_lengthscale: bool,
    /// Locations (data coordinates) where lambda is tracked in the trace.
    pub probes: Vec<Vec<f64>>,
    /// Route phi through Metropolis even when a conjugate draw exists.
    pub force_metropolis_phi: bool,
    /// Keep a per-record snapshot of the GP state for density evaluation.
    pub archive_samples: bool,
}

impl McmcConfig {
    pub fn new(iterations: usize, burn_in: usize) -> Self {
        McmcConfig {
            iterations,
            burn_in,
            thin: 1,
            round_cap: crate::prior_sim::DEFAULT_ROUND_CAP,
            hmc: HmcConfig::default(),
            lengthscale_prior: LengthscalePrior { log_location: 0.0, log_scale: 1.0 },
            update_lengthscale: true,
            probes: Vec::new(),
            force_metropolis_phi: false,
            archive_samples: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.round_cap == 0 {
            return Err(Error::Config("round_cap must be positive".into()));
        }
        if !(self.hmc.step_size > 0.0) || self.hmc.leapfrog_steps == 0 {
            return Err(Error::Config("invalid HMC settings".into()));
        }
        if !(self.lengthscale_prior.log_scale > 0.0) {
            return Err(Error::Config("lengthscale prior scale must be positive".into()));
        }
        Ok(())
    }
}

/// Adaptation and acceptance bookkeeping; adapted during burn-in, frozen
/// afterwards.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepState {
    pub theta: RwStep,
    pub phi: RwStep,
    pub log_hmc_step: f64,
    hmc_tries: u64,
    hmc_accepts: u64,
    hmc_aborts: u64,
    delta_h_sum: f64,
}

impl StepState {
    pub fn new(hmc_step: f64) -> Self {
        StepState {
            theta: RwStep::new(1, 0.3),
            phi: RwStep::new(1, 0.3),
            log_hmc_step: hmc_step.ln(),
            hmc_tries: 0,
            hmc_accepts: 0,
            hmc_aborts: 0,
            delta_h_sum: 0.0,
        }
    }

    /// Mean |Delta H| over accepted HMC steps.
    pub fn mean_abs_delta_h(&self) -> Option<f64> {
        if self.hmc_accepts == 0 {
            None
        } else {
            Some(self.delta_h_sum / self.hmc_accepts as f64)
        }
    }

    pub fn hmc_acceptance(&self) -> Option<f64> {
        if self.hmc_tries == 0 {
            None
        } else {
            Some(self.hmc_accepts as f64 / self.hmc_tries as f64)
        }
    }
}

/// Full sampler state between sweeps.
///
/// Invariant: `gp.points()` lists the n observation locations first, then
/// every currently rejected proposal grouped by observation in draw order,
/// each exactly once; `rejected[i]` holds observation i's rejected
/// unconstrained blocks in the same order.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub theta: CenteringParams,
    pub phi: Option<Phi>,
    pub gp: GpRealization,
    pub rejected: Vec<Vec<Vec<f64>>>,
    pub n_obs: usize,
    pub sweep: u64,
    pub steps: StepState,
}

impl ChainState {
    pub fn lengthscale(&self) -> f64 {
        self.gp.lengthscale()
    }

    pub fn y_total(&self) -> usize {
        self.rejected.iter().map(|y| y.len()).sum()
    }
}

/// Log-target components recorded per sweep.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LogParts {
    pub lambda_lik: f64,
    pub marginal_lik: f64,
    pub centering_lik: f64,
    pub theta_prior: f64,
    pub phi_prior: f64,
    pub gp_prior: f64,
}

/// Everything density evaluation needs from one posterior draw.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub n_obs: usize,
    pub theta: CenteringParams,
    pub phi: Option<Phi>,
    pub lengthscale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sweep: u64,
    pub theta: CenteringParams,
    pub phi: Option<Phi>,
    pub lengthscale: f64,
    pub y_total: usize,
    pub lambda_probe: Vec<f64>,
    pub log_parts: LogParts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<PosteriorSample>,
}

/// Thinned post-burn-in history of a chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<SweepRecord>,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub probe_points: Vec<Vec<f64>>,
}

impl Trace {
    pub fn samples(&self) -> Vec<&PosteriorSample> {
        self.records.iter().filter_map(|r| r.sample.as_ref()).collect()
    }
}

/// Optional deliberate breakage for the correctness harness. The harness
/// must detect a sampler whose theta update skips the Metropolis correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerMutation {
    None,
    SkipThetaCorrection,
}

/// Median pairwise distance between locations; the default lengthscale
/// initializer and prior location.
pub fn median_pairwise_distance(locations: &[Vec<f64>]) -> Option<f64> {
    let n = locations.len();
    if n < 2 {
        return None;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = locations[i]
                .iter()
                .zip(&locations[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = dists[dists.len() / 2];
    if med > 0.0 {
        Some(med)
    } else {
        None
    }
}

fn column_moments(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut means = vec![0.0; dim];
    for r in rows {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut vars = vec![0.0; dim];
    for r in rows {
        for ((s, m), v) in vars.iter_mut().zip(&means).zip(r) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for v in vars.iter_mut() {
        *v = v.max(1e-6);
    }
    (means, vars)
}

/// Starting state: phi and theta moment-matched to the data (a prior draw
/// from the experiments' heavy-tailed hyperparameters routinely overflows),
/// lambda at the observations pinned to the GP mean, rejected sets empty
/// (the first sweep populates them), lengthscale at the median pairwise
/// distance unless the prior location was pinned.
pub fn init_state(model: &Model, data: &ObsData, cfg: &McmcConfig) -> Result<ChainState> {
    model.validate()?;
    cfg.validate()?;
    data.validate(model)?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Data("cannot fit an empty dataset".into()));
    }

    let (xac_means, xac_vars) = column_moments(&data.xac, model.dim_ac);
    let theta = match model.centering.variant {
        crate::centering::CenteringVariant::Independent => CenteringParams::Independent {
            means: xac_means.clone(),
            vars: xac_vars.clone(),
        },
        variant => {
            let (xa_means, xa_vars) = column_moments(&data.xa, model.dim_a());
            let rho = if n >= 3 {
                let mut cov = 0.0;
                for (xa, xac) in data.xa.iter().zip(&data.xac) {
                    cov += (xa[0] - xa_means[0]) * (xac[0] - xac_means[0]) / n as f64;
                }
                (cov / (xa_vars[0] * xac_vars[0]).sqrt()).clamp(-0.9, 0.9)
            } else {
                0.0
            };
            let scale_sq = match variant {
                crate::centering::CenteringVariant::SharedVariance => xa_vars[0],
                _ => xac_vars[0],
            };
            CenteringParams::Correlated { rho, mu2: xac_means[0], scale_sq }
        }
    };

    let phi = match &model.constraint {
        None => None,
        Some(c) => Some(match &c.phi_prior {
            crate::constraints::PriorSpec::Dirac { phi } => *phi,
            _ => {
                let flat: Vec<f64> = data.xa.iter().flatten().cloned().collect();
                let n_flat = flat.len() as f64;
                let mean = flat.iter().sum::<f64>() / n_flat;
                match c.family {
                    crate::constraints::ConstraintFamily::Gaussian => {
                        let var = flat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n_flat;
                        Phi::Gaussian { mean, var: var.max(1e-6) }
                    }
                    crate::constraints::ConstraintFamily::Lognormal => {
                        let logs: Vec<f64> = flat.iter().map(|x| x.ln()).collect();
                        let lm = logs.iter().sum::<f64>() / n_flat;
                        let lv = logs.iter().map(|x| (x - lm).powi(2)).sum::<f64>() / n_flat;
                        Phi::Lognormal { mu: lm, sigma_sq: lv.max(1e-6) }
                    }
                    crate::constraints::ConstraintFamily::Exponential => {
                        Phi::Exponential { rate: 1.0 / mean.max(1e-12) }
                    }
                }
            }
        }),
    };
    let phi = model.effective_phi(&theta, phi);

    let locations: Vec<Vec<f64>> = data
        .xa
        .iter()
        .zip(&data.xac)
        .map(|(xa, xac)| model.location(xa, xac))
        .collect();
    let init_l = median_pairwise_distance(&locations)
        .unwrap_or_else(|| cfg.lengthscale_prior.log_location.exp());
    let mut kernel = model.kernel;
    kernel.lengthscale = init_l;

    let gp = if model.lambda_mode.is_gp() {
        GpRealization::from_parts(locations, vec![model.gp_mean; n], model.gp_mean, kernel)?
    } else {
        GpRealization::empty(model.gp_mean, kernel)
    };

    let mut steps = StepState::new(cfg.hmc.step_size);
    steps.theta = theta_step_of(model);
    steps.phi = phi_step_of(model);
    Ok(ChainState {
        theta,
        phi,
        gp,
        rejected: vec![Vec::new(); n],
        n_obs: n,
        sweep: 0,
        steps,
    })
}

/// Re-run the proposal loop at the observations' fixed constrained
/// coordinates, conditioning the GP on everything currently instantiated;
/// keep the rejected proposals (with their freshly drawn lambda values),
/// discard the accepted draw, and restrict the GP to observations plus the
/// new rejected points.
pub fn resample_rejections(
    model: &Model,
    state: &mut ChainState,
    data: &ObsData,
    cap: usize,
    key: &RngKey,
) -> Result<()> {
    let n = state.n_obs;
    let phi_eff = model.effective_phi(&state.theta, state.phi);
    let gp_opt = if model.lambda_mode.is_gp() {
        Some(&mut state.gp)
    } else {
        None
    };
    let out = rejection_rounds(model, &state.theta, phi_eff.as_ref(), &data.xa, gp_opt, cap, key)?;
    if model.lambda_mode.is_gp() {
        let mut keep: Vec<usize> = (0..n).collect();
        for idx in &out.rejected_gp_idx {
            keep.extend(idx.iter().cloned());
        }
        state.gp.restrict(&keep)?;
    }
    state.rejected = out.rejected;
    Ok(())
}

/// Classification log-likelihood of instantiated values: the first `n_acc`
/// are accepted (sigma factors), the next `n_rej` rejected (1 - sigma
/// factors); any further instantiated points carry no likelihood.
fn lambda_loglik(values: &DVector<f64>, n_acc: usize, n_rej: usize) -> f64 {
    let mut ll = 0.0;
    for i in 0..n_acc {
        ll += log_sigmoid(values[i]);
    }
    for i in n_acc..(n_acc + n_rej) {
        ll += log1m_sigmoid(values[i]);
    }
    ll
}

/// One elliptical slice transition for lambda against the classification
/// likelihood: accepted points pull sigma(lambda) up, rejected points pull
/// it down. The shrinking bracket terminates with probability one.
pub fn update_lambda(state: &mut ChainState, rng: &mut ChaCha12Rng) -> Result<()> {
    let m = state.gp.len();
    if m == 0 {
        return Ok(());
    }
    let (n_acc, n_rej) = (state.n_obs, state.y_total());
    debug_assert!(n_acc + n_rej <= m, "likelihood mask exceeds instantiation");
    let mu = state.gp.mean_const();
    let f = state.gp.values().clone();
    let centered = &f - DVector::from_element(m, mu);
    let nu = state.gp.prior_noise(rng);
    let logy = lambda_loglik(&f, n_acc, n_rej) + rng.gen::<f64>().ln();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut eps: f64 = rng.gen::<f64>() * two_pi;
    let (mut lo, mut hi) = (eps - two_pi, eps);
    for _ in 0..1000 {
        let cand = DVector::from_element(m, mu) + &centered * eps.cos() + &nu * eps.sin();
        if lambda_loglik(&cand, n_acc, n_rej) > logy {
            state.gp.set_values(cand)?;
            return Ok(());
        }
        if eps < 0.0 {
            lo = eps;
        } else {
            hi = eps;
        }
        eps = lo + rng.gen::<f64>() * (hi - lo);
    }
    Err(Error::Numeric(
        "elliptical slice bracket failed to terminate".into(),
    ))
}

/// One HMC transition on log lengthscale, Metropolis-corrected, targeting
/// the lengthscale prior times the GP density of the instantiated values.
/// A non-finite gradient aborts the step and keeps the current value.
pub fn update_lengthscale(
    state: &mut ChainState,
    cfg: &McmcConfig,
    adapt: bool,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    if state.gp.is_empty() || !cfg.update_lengthscale {
        return Ok(());
    }
    let prior = cfg.lengthscale_prior;
    let log_target = |gp: &GpRealization, t: f64| -> Result<f64> {
        let z = (t - prior.log_location) / prior.log_scale;
        Ok(-0.5 * z * z + gp.logpdf()?)
    };
    let grad = |gp: &GpRealization, t: f64| -> Result<f64> {
        let z = (t - prior.log_location) / (prior.log_scale * prior.log_scale);
        Ok(-z + gp.grad_logpdf_wrt_log_lengthscale()?)
    };

    let t0 = state.gp.lengthscale().ln();
    let eps = state.steps.log_hmc_step.exp();
    let steps = cfg.hmc.leapfrog_steps;

    let mut t = t0;
    let lp0 = log_target(&state.gp, t0)?;
    let mut g = grad(&state.gp, t0)?;
    use rand_distr::StandardNormal;
    let p0: f64 = rng.sample(StandardNormal);
    let mut p = p0;
    let h0 = -lp0 + 0.5 * p0 * p0;

    let mut ok = true;
    for _ in 0..steps {
        p += 0.5 * eps * g;
        t += eps * p;
        if state.gp.set_lengthscale(t.exp()).is_err() {
            ok = false;
            break;
        }
        match grad(&state.gp, t) {
            Ok(gv) if gv.is_finite() => g = gv,
            _ => {
                ok = false;
                break;
            }
        }
        p += 0.5 * eps * g;
    }

    state.steps.hmc_tries += 1;
    if !ok {
        state.steps.hmc_aborts += 1;
        state.gp.set_lengthscale(t0.exp())?;
        return Ok(());
    }
    let lp1 = log_target(&state.gp, t)?;
    let h1 = -lp1 + 0.5 * p * p;
    let delta_h = h1 - h0;
    let accept = delta_h.is_finite() && rng.gen::<f64>().ln() < -delta_h;
    if accept {
        state.steps.hmc_accepts += 1;
        state.steps.delta_h_sum += delta_h.abs();
    } else {
        state.gp.set_lengthscale(t0.exp())?;
    }
    if adapt {
        let tries = state.steps.hmc_tries as f64;
        let gamma = (tries + 10.0).powf(-0.6);
        let acc = if accept { 1.0 } else { 0.0 };
        state.steps.log_hmc_step += gamma * (acc - 0.9);
        state.steps.log_hmc_step = state.steps.log_hmc_step.clamp(-12.0, 3.0);
    }
    Ok(())
}

fn shared_var_of(model: &Model, theta: &CenteringParams) -> Option<f64> {
    match (model.centering.variant, theta) {
        (
            crate::centering::CenteringVariant::SharedVariance,
            CenteringParams::Correlated { scale_sq, .. },
        ) => Some(*scale_sq),
        _ => None,
    }
}

fn phi_step_of(model: &Model) -> RwStep {
    let comps = match model.constraint.as_ref().map(|c| (&c.phi_prior, c.family)) {
        Some((crate::constraints::PriorSpec::NormalGivenVariance { .. }, _)) => 1,
        Some((_, crate::constraints::ConstraintFamily::Exponential)) => 1,
        Some(_) => 2,
        None => 1,
    };
    RwStep::new(comps, 0.3)
}

fn theta_step_of(model: &Model) -> RwStep {
    let comps = match model.centering.variant {
        crate::centering::CenteringVariant::Independent => 2 * model.dim_ac,
        _ => 3,
    };
    RwStep::new(comps, 0.3)
}

/// Update phi given everything else (no-op for Dirac priors and baselines).
pub fn update_phi_step(
    model: &Model,
    state: &mut ChainState,
    data: &ObsData,
    force_metropolis: bool,
    adapt: bool,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let constraint = match &model.constraint {
        Some(c) => c,
        None => return Ok(()),
    };
    let phi = state
        .phi
        .ok_or_else(|| Error::InvalidParameter("constrained chain lost phi".into()))?;
    let theta = state.theta.clone();
    let rejected = state.rejected.clone();
    let centering = &model.centering;
    let xa = &data.xa;
    let xac = &data.xac;
    let centering_loglik = move |cand: &Phi| -> Result<f64> {
        let mut ll = 0.0;
        for (i, (a, c)) in xa.iter().zip(xac.iter()).enumerate() {
            ll += centering.logpdf(&theta, Some(cand), a, c)?;
            for y in &rejected[i] {
                ll += centering.logpdf(&theta, Some(cand), a, y)?;
            }
        }
        Ok(ll)
    };
    let u = PhiUpdate {
        constraint,
        data_xa: &data.xa,
        centering_phi_free: model.centering.is_phi_free(),
        centering_loglik: &centering_loglik,
        shared_var: shared_var_of(model, &state.theta),
        force_metropolis,
    };
    let new_phi = update_phi(&u, &phi, &mut state.steps.phi, adapt, rng)?;
    state.phi = Some(new_phi);
    Ok(())
}

/// Update theta given everything else.
pub fn update_theta_step(
    model: &Model,
    state: &mut ChainState,
    data: &ObsData,
    mutation: SamplerMutation,
    adapt: bool,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let u = ThetaUpdate {
        model: &model.centering,
        phi: state.phi.as_ref(),
        constraint: model.constraint.as_ref(),
        data_xa: &data.xa,
        data_xac: &data.xac,
        rejected: &state.rejected,
        force_accept: mutation == SamplerMutation::SkipThetaCorrection,
    };
    let new_theta = update_theta(&u, &state.theta, &mut state.steps.theta, adapt, rng)?;
    state.theta = new_theta;
    // Under shared variance the phi variance tracks theta's scale.
    state.phi = model.effective_phi(&state.theta, state.phi);
    Ok(())
}

/// One full sweep in the fixed scan order: rejected sets, lambda, phi,
/// theta, lengthscale.
pub fn gibbs_sweep(
    model: &Model,
    state: &mut ChainState,
    data: &ObsData,
    cfg: &McmcConfig,
    adapt: bool,
    mutation: SamplerMutation,
    key: &RngKey,
) -> Result<()> {
    resample_rejections(model, state, data, cfg.round_cap, &key.child(domain::REDRAW))?;
    if model.lambda_mode.is_gp() {
        update_lambda(state, &mut key.child(domain::LAMBDA).rng())?;
    }
    update_phi_step(
        model,
        state,
        data,
        cfg.force_metropolis_phi,
        adapt,
        &mut key.child(domain::PHI).rng(),
    )?;
    update_theta_step(model, state, data, mutation, adapt, &mut key.child(domain::THETA).rng())?;
    if model.lambda_mode.is_gp() {
        update_lengthscale(state, cfg, adapt, &mut key.child(domain::LENGTHSCALE).rng())?;
    }
    state.sweep += 1;
    Ok(())
}

/// Log-target components at the current state, for the trace.
pub fn log_parts(model: &Model, state: &ChainState, data: &ObsData) -> Result<LogParts> {
    let mut parts = LogParts::default();
    if !state.gp.is_empty() {
        parts.lambda_lik = lambda_loglik(state.gp.values(), state.n_obs, state.y_total());
        parts.gp_prior = state.gp.logpdf()?;
    }
    let phi_eff = model.effective_phi(&state.theta, state.phi);
    if let (Some(c), Some(phi)) = (&model.constraint, &phi_eff) {
        for xa in &data.xa {
            parts.marginal_lik += c.marginal_logpdf(phi, xa)?;
        }
        parts.phi_prior = c.phi_log_prior(phi, shared_var_of(model, &state.theta))?;
    }
    for (i, (xa, xac)) in data.xa.iter().zip(&data.xac).enumerate() {
        parts.centering_lik += model.centering.logpdf(&state.theta, phi_eff.as_ref(), xa, xac)?;
        for y in &state.rejected[i] {
            parts.centering_lik += model.centering.logpdf(&state.theta, phi_eff.as_ref(), xa, y)?;
        }
    }
    parts.theta_prior = model.centering.theta_log_prior(&state.theta);
    Ok(parts)
}

fn record_sweep(
    model: &Model,
    state: &ChainState,
    data: &ObsData,
    cfg: &McmcConfig,
    key: &RngKey,
) -> Result<SweepRecord> {
    let lambda_probe = if !cfg.probes.is_empty() && model.lambda_mode.is_gp() && !state.gp.is_empty()
    {
        let locs: Vec<Vec<f64>> = cfg
            .probes
            .iter()
            .map(|p| {
                let split = model.dim_a();
                model.location(&p[..split], &p[split..])
            })
            .collect();
        let mut rng = key.child(domain::PROBE).rng();
        state.gp.draw_at(&locs, &mut rng)?.iter().cloned().collect()
    } else {
        Vec::new()
    };
    let sample = if cfg.archive_samples {
        Some(PosteriorSample {
            points: state.gp.points().to_vec(),
            values: state.gp.values().iter().cloned().collect(),
            n_obs: state.n_obs,
            theta: state.theta.clone(),
            phi: state.phi,
            lengthscale: state.gp.lengthscale(),
        })
    } else {
        None
    };
    Ok(SweepRecord {
        sweep: state.sweep,
        theta: state.theta.clone(),
        phi: state.phi,
        lengthscale: state.gp.lengthscale(),
        y_total: state.y_total(),
        lambda_probe,
        log_parts: log_parts(model, state, data)?,
        sample,
    })
}

/// Run a chain: init, burn in with adaptation, then record every `thin`-th
/// sweep. All randomness derives from (seed, sweep index), so a run is fully
/// reproducible and resumable.
pub fn run_chain(model: &Model, data: &ObsData, cfg: &McmcConfig, seed: u64) -> Result<(Trace, ChainState)> {
    let mut state = init_state(model, data, cfg)?;
    let trace = continue_chain(model, data, cfg, seed, &mut state)?;
    Ok((trace, state))
}

/// Advance an existing state to `cfg.iterations` total sweeps, recording the
/// post-burn-in thinned history.
pub fn continue_chain(
    model: &Model,
    data: &ObsData,
    cfg: &McmcConfig,
    seed: u64,
    state: &mut ChainState,
) -> Result<Trace> {
    cfg.validate()?;
    let fit_key = RngKey::root(seed).child(domain::FIT);
    let mut records = Vec::new();
    while (state.sweep as usize) < cfg.iterations {
        let sweep_idx = state.sweep;
        let adapt = (sweep_idx as usize) < cfg.burn_in;
        let key = fit_key.child(sweep_idx);
        gibbs_sweep(model, state, data, cfg, adapt, SamplerMutation::None, &key)?;
        let done = state.sweep as usize;
        if done > cfg.burn_in && (done - cfg.burn_in - 1) % cfg.thin == 0 {
            records.push(record_sweep(model, state, data, cfg, &key)?);
        }
    }
    Ok(Trace {
        records,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        seed,
        probe_points: cfg.probes.clone(),
    })
}

/// Redraw the dataset given the current parameters and latent function, for
/// the successive-conditional simulator: run the forward loop conditioning
/// on the instantiated GP, keep the accepted draws as the new data and the
/// rejected sets as the new augmentation, then restrict the GP to them.
pub fn redraw_data(
    model: &Model,
    state: &mut ChainState,
    cap: usize,
    key: &RngKey,
) -> Result<ObsData> {
    let n = state.n_obs;
    let phi_eff = model.effective_phi(&state.theta, state.phi);
    let xa_rows: Vec<Vec<f64>> = match (&model.constraint, &phi_eff) {
        (Some(c), Some(p)) => {
            let mut rng = key.child(domain::MARGINAL).rng();
            c.sample_marginal(p, n, &mut rng)
        }
        (None, _) => vec![Vec::new(); n],
        _ => return Err(Error::InvalidParameter("constrained chain lost phi".into())),
    };
    let gp_opt = if model.lambda_mode.is_gp() {
        Some(&mut state.gp)
    } else {
        None
    };
    let out = rejection_rounds(model, &state.theta, phi_eff.as_ref(), &xa_rows, gp_opt, cap, key)?;
    if model.lambda_mode.is_gp() {
        let mut keep: Vec<usize> = out.accepted_gp_idx.clone();
        for idx in &out.rejected_gp_idx {
            keep.extend(idx.iter().cloned());
        }
        state.gp.restrict(&keep)?;
    }
    state.rejected = out.rejected;
    Ok(ObsData { xa: xa_rows, xac: out.accepted_xac })
}

/// Versioned checkpoint of a chain state; lambda values round-trip exactly
/// through the shortest-round-trip decimal encoding.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub sweep: u64,
    pub n_obs: usize,
    pub theta: CenteringParams,
    pub phi: Option<Phi>,
    pub lengthscale: f64,
    pub gp_points: Vec<Vec<f64>>,
    pub gp_values: Vec<f64>,
    pub rejected: Vec<Vec<Vec<f64>>>,
    pub steps: StepState,
}

pub fn save_checkpoint(state: &ChainState, seed: u64) -> Checkpoint {
    Checkpoint {
        version: 1,
        seed,
        sweep: state.sweep,
        n_obs: state.n_obs,
        theta: state.theta.clone(),
        phi: state.phi,
        lengthscale: state.gp.lengthscale(),
        gp_points: state.gp.points().to_vec(),
        gp_values: state.gp.values().iter().cloned().collect(),
        rejected: state.rejected.clone(),
        steps: state.steps.clone(),
    }
}

pub fn load_checkpoint(model: &Model, doc: Checkpoint) -> Result<ChainState> {
    if doc.version != 1 {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            doc.version
        )));
    }
    let mut kernel = model.kernel;
    kernel.lengthscale = doc.lengthscale;
    let gp = GpRealization::from_parts(doc.gp_points, doc.gp_values, model.gp_mean, kernel)?;
    Ok(ChainState {
        theta: doc.theta,
        phi: doc.phi,
        gp,
        rejected: doc.rejected,
        n_obs: doc.n_obs,
        sweep: doc.sweep,
        steps: doc.steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centering::{CenteringModel, CenteringVariant, NiguPrior};
    use crate::constraints::{ConstraintFamily, MarginalConstraint, PriorSpec};
    use crate::kernel::KernelParams;
    use crate::model::LambdaMode;
    use crate::prior_sim::sigmoid;
    use rand_chacha::rand_core::SeedableRng;

    fn micro_model(lambda_mode: LambdaMode) -> Model {
        Model {
            constraint: Some(
                MarginalConstraint::new(
                    ConstraintFamily::Gaussian,
                    PriorSpec::Dirac { phi: Phi::Gaussian { mean: 0.0, var: 1.0 } },
                    1,
                )
                .unwrap(),
            ),
            centering: CenteringModel::new(
                CenteringVariant::ConditionalNormal,
                NiguPrior { mu0: 0.0, k0: 2.0, alpha0: 4.0, beta0: 4.0 },
            )
            .unwrap(),
            kernel: KernelParams::new(1.0, 1.5).unwrap(),
            gp_mean: 0.0,
            dim_ac: 1,
            location_map: None,
            lambda_mode,
        }
    }

    fn micro_data() -> ObsData {
        ObsData {
            xa: vec![vec![-0.5], vec![0.2], vec![1.1]],
            xac: vec![vec![0.3], vec![-0.6], vec![0.9]],
        }
    }

    fn micro_cfg() -> McmcConfig {
        let mut cfg = McmcConfig::new(20, 5);
        cfg.lengthscale_prior = LengthscalePrior { log_location: 0.4, log_scale: 1.0 };
        cfg.archive_samples = true;
        cfg
    }

    #[test]
    fn sigma_one_hook_empties_rejected_sets() {
        let model = micro_model(LambdaMode::Fixed(1e9));
        let data = micro_data();
        let cfg = micro_cfg();
        let mut state = init_state(&model, &data, &cfg).unwrap();
        let key = RngKey::root(1).child(domain::FIT).child(0);
        resample_rejections(&model, &mut state, &data, cfg.round_cap, &key).unwrap();
        assert_eq!(state.y_total(), 0);
    }

    #[test]
    fn sigma_half_hook_rejections_are_geometric_across_sweeps() {
        let model = micro_model(LambdaMode::Fixed(0.0));
        let data = ObsData { xa: vec![vec![0.0]], xac: vec![vec![0.0]] };
        let cfg = micro_cfg();
        let mut state = init_state(&model, &data, &cfg).unwrap();
        let key = RngKey::root(2).child(domain::FIT);
        let sweeps = 10_000;
        let mut total = 0usize;
        for s in 0..sweeps {
            resample_rejections(&model, &mut state, &data, cfg.round_cap, &key.child(s)).unwrap();
            total += state.y_total();
        }
        let mean = total as f64 / sweeps as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean rejections {}", mean);
    }

    #[test]
    fn resample_keeps_observation_points_and_values() {
        let model = micro_model(LambdaMode::Gp);
        let data = micro_data();
        let cfg = micro_cfg();
        let mut state = init_state(&model, &data, &cfg).unwrap();
        let before: Vec<f64> = state.gp.values().iter().cloned().take(3).collect();
        let key = RngKey::root(3).child(domain::FIT).child(0);
        resample_rejections(&model, &mut state, &data, cfg.round_cap, &key).unwrap();
        assert_eq!(state.gp.len(), 3 + state.y_total());
        let after: Vec<f64> = state.gp.values().iter().cloned().take(3).collect();
        assert_eq!(before, after, "observation lambda values must survive");
        for (i, xa) in data.xa.iter().enumerate() {
            assert_eq!(state.gp.points()[i], model.location(xa, &data.xac[i]));
        }
    }

    #[test]
    fn lambda_likelihood_matches_naive_loop() {
        let vals = DVector::from_vec(vec![0.3, -0.8, 1.2, -0.1, 0.6]);
        let got = lambda_loglik(&vals, 2, 3);
        let mut expect = 0.0;
        for i in 0..2 {
            expect += sigmoid(vals[i]).ln();
        }
        for i in 2..5 {
            expect += (1.0 - sigmoid(vals[i])).ln();
        }
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn ess_with_empty_likelihood_preserves_gp_prior() {
        // No observations or rejections contributing likelihood: the slice
        // update must leave the prior invariant. Track first/second moments
        // of lambda at two points over many sweeps started from a prior draw.
        let model = micro_model(LambdaMode::Gp);
        let k = model.kernel;
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.5]];
        let mut rng = RngKey::root(4).rng();
        let mut gp = GpRealization::empty(0.0, k);
        gp.extend(&pts, &mut rng).unwrap();
        let mut state = ChainState {
            theta: CenteringParams::Correlated { rho: 0.0, mu2: 0.0, scale_sq: 1.0 },
            phi: None,
            gp,
            rejected: vec![],
            n_obs: 0,
            sweep: 0,
            steps: StepState::new(0.1),
        };
        let sweeps = 10_000;
        let mut sum = [0.0f64; 2];
        let mut sum2 = [0.0f64; 2];
        for _ in 0..sweeps {
            update_lambda(&mut state, &mut rng).unwrap();
            for i in 0..2 {
                let v = state.gp.values()[i];
                sum[i] += v;
                sum2[i] += v * v;
            }
        }
        for i in 0..2 {
            let mean = sum[i] / sweeps as f64;
            let var = sum2[i] / sweeps as f64 - mean * mean;
            // Autocorrelated chain: allow a generous band around N(0, 1).
            assert!(mean.abs() < 0.1, "mean {}", mean);
            assert!((var - 1.0).abs() < 0.12, "var {}", var);
        }
    }

    #[test]
    fn single_accepted_point_pulls_sigma_up() {
        // Posterior mean of sigma(lambda) for one accepted point under a
        // standard normal prior, against 1-D quadrature of
        // sigma(x) N(x; 0, 1 + jitter) / Z.
        let mut gp = GpRealization::from_parts(
            vec![vec![0.0, 0.0]],
            vec![0.0],
            0.0,
            KernelParams::new(1.0, 1.0).unwrap(),
        )
        .unwrap();
        gp.set_values(DVector::from_vec(vec![0.3])).unwrap();
        let mut state = ChainState {
            theta: CenteringParams::Correlated { rho: 0.0, mu2: 0.0, scale_sq: 1.0 },
            phi: None,
            gp,
            rejected: vec![Vec::new()],
            n_obs: 1,
            sweep: 0,
            steps: StepState::new(0.1),
        };
        let mut rng = RngKey::root(5).rng();
        let sweeps = 20_000;
        let mut mean_sigma = 0.0;
        for _ in 0..sweeps {
            update_lambda(&mut state, &mut rng).unwrap();
            mean_sigma += sigmoid(state.gp.values()[0]);
        }
        mean_sigma /= sweeps as f64;
        // Quadrature oracle over the same (jittered) prior variance.
        let var = 1.0 + 1e-8;
        let (mut num, mut den) = (0.0, 0.0);
        let grid = 20_001;
        for i in 0..grid {
            let x = -10.0 + 20.0 * i as f64 / (grid - 1) as f64;
            let w = (-x * x / (2.0 * var)).exp();
            num += sigmoid(x) * sigmoid(x) * w;
            den += sigmoid(x) * w;
        }
        let oracle = num / den;
        assert!(oracle > 0.5);
        assert!(
            (mean_sigma / oracle - 1.0).abs() < 0.02,
            "mean sigma {} vs oracle {}",
            mean_sigma,
            oracle
        );
    }

    #[test]
    fn lengthscale_posterior_matches_quadrature_when_values_equal_mean() {
        // All lambda values at the mean: the quadratic form vanishes and the
        // target reduces to prior times the determinant term. Compare the
        // long-run mean of log l against 1-D quadrature.
        let pts = vec![vec![0.0], vec![0.6], vec![1.3]];
        let kernel = KernelParams::new(1.0, 1.0).unwrap();
        let gp = GpRealization::from_parts(pts.clone(), vec![0.0; 3], 0.0, kernel).unwrap();
        let mut cfg = micro_cfg();
        cfg.lengthscale_prior = LengthscalePrior { log_location: 0.0, log_scale: 0.7 };
        cfg.hmc = HmcConfig { step_size: 0.25, leapfrog_steps: 4 };
        let mut state = ChainState {
            theta: CenteringParams::Correlated { rho: 0.0, mu2: 0.0, scale_sq: 1.0 },
            phi: None,
            gp,
            rejected: vec![],
            n_obs: 0,
            sweep: 0,
            steps: StepState::new(cfg.hmc.step_size),
        };
        let mut rng = RngKey::root(6).rng();
        for _ in 0..500 {
            update_lengthscale(&mut state, &cfg, true, &mut rng).unwrap();
        }
        let sweeps = 30_000;
        let mut mean_t = 0.0;
        for _ in 0..sweeps {
            update_lengthscale(&mut state, &cfg, false, &mut rng).unwrap();
            mean_t += state.gp.lengthscale().ln();
        }
        mean_t /= sweeps as f64;

        // Quadrature over t = log l of exp(-(t/0.7)^2/2) * MVN(0; K(e^t)).
        let (mut num, mut den) = (0.0, 0.0);
        let grid = 4001;
        for i in 0..grid {
            let t = -6.0 + 12.0 * i as f64 / (grid - 1) as f64;
            let mut g = GpRealization::from_parts(
                pts.clone(),
                vec![0.0; 3],
                0.0,
                KernelParams::new(1.0, t.exp()).unwrap(),
            )
            .unwrap();
            g.set_lengthscale(t.exp()).unwrap();
            let z = t / 0.7;
            let w = (-0.5 * z * z + g.logpdf().unwrap()).exp();
            num += t * w;
            den += w;
        }
        let oracle = num / den;
        assert!(
            (mean_t - oracle).abs() < 0.02 * oracle.abs().max(1.0),
            "mean log l {} vs quadrature {}",
            mean_t,
            oracle
        );
        // Energy error on accepted steps stays small at the adapted step.
        let dh = state.steps.mean_abs_delta_h().unwrap();
        assert!(dh < 0.2, "mean |dH| = {}", dh);
    }

    #[test]
    fn lengthscale_with_distant_points_follows_prior() {
        // Two far-separated points with values at the mean are uninformative;
        // the chain must reproduce the prior on log l.
        let pts = vec![vec![0.0], vec![1e6]];
        let kernel = KernelParams::new(1.0, 1.0).unwrap();
        let gp = GpRealization::from_parts(pts, vec![0.0; 2], 0.0, kernel).unwrap();
        let mut cfg = micro_cfg();
        cfg.lengthscale_prior = LengthscalePrior { log_location: 0.3, log_scale: 0.5 };
        cfg.hmc = HmcConfig { step_size: 0.3, leapfrog_steps: 4 };
        let mut state = ChainState {
            theta: CenteringParams::Correlated { rho: 0.0, mu2: 0.0, scale_sq: 1.0 },
            phi: None,
            gp,
            rejected: vec![],
            n_obs: 0,
            sweep: 0,
            steps: StepState::new(cfg.hmc.step_size),
        };
        let mut rng = RngKey::root(7).rng();
        for _ in 0..500 {
            update_lengthscale(&mut state, &cfg, true, &mut rng).unwrap();
        }
        let n = 20_000;
        let mut ts = Vec::with_capacity(n);
        for _ in 0..n {
            update_lengthscale(&mut state, &cfg, false, &mut rng).unwrap();
            ts.push(state.gp.lengthscale().ln());
        }
        // KS against N(0.3, 0.5^2) with an effective-sample-size adjusted
        // threshold: thin by 20 to tame autocorrelation.
        let mut thinned: Vec<f64> = ts.iter().step_by(20).cloned().collect();
        thinned.sort_by(|a, b| a.partial_cmp(b).unwrap());
        use statrs::distribution::{ContinuousCDF, Normal as SNormal};
        let prior = SNormal::new(0.3, 0.5).unwrap();
        let m = thinned.len();
        let mut d = 0.0f64;
        for (i, t) in thinned.iter().enumerate() {
            let f = prior.cdf(*t);
            d = d.max((f - i as f64 / m as f64).abs());
            d = d.max(((i + 1) as f64 / m as f64 - f).abs());
        }
        assert!(d < 1.63 / (m as f64).sqrt(), "KS statistic {} over {}", d, m);
    }

    #[test]
    fn dirac_phi_constant_across_trace() {
        let model = micro_model(LambdaMode::Gp);
        let data = micro_data();
        let mut cfg = micro_cfg();
        cfg.iterations = 30;
        cfg.burn_in = 5;
        let (trace, _) = run_chain(&model, &data, &cfg, 99).unwrap();
        assert_eq!(trace.records.len(), 25);
        for r in &trace.records {
            assert_eq!(r.phi, Some(Phi::Gaussian { mean: 0.0, var: 1.0 }));
        }
    }

    #[test]
    fn chain_is_deterministic_given_seed() {
        let model = micro_model(LambdaMode::Gp);
        let data = micro_data();
        let cfg = micro_cfg();
        let (t1, _) = run_chain(&model, &data, &cfg, 7).unwrap();
        let (t2, _) = run_chain(&model, &data, &cfg, 7).unwrap();
        let j1 = serde_json::to_string(&t1).unwrap();
        let j2 = serde_json::to_string(&t2).unwrap();
        assert_eq!(j1, j2);
        let (t3, _) = run_chain(&model, &data, &cfg, 8).unwrap();
        assert_ne!(j1, serde_json::to_string(&t3).unwrap());
    }

    #[test]
    fn checkpoint_resume_reproduces_full_run() {
        let model = micro_model(LambdaMode::Gp);
        let data = micro_data();
        let mut cfg = micro_cfg();
        cfg.iterations = 16;
        cfg.burn_in = 4;
        let seed = 31;
        let (full, _) = run_chain(&model, &data, &cfg, seed).unwrap();

        // Run 9 sweeps, checkpoint through JSON, resume to 16.
        let mut part_cfg = cfg.clone();
        part_cfg.iterations = 9;
        part_cfg.burn_in = 4;
        let (_, state) = run_chain(&model, &data, &part_cfg, seed).unwrap();
        let json = serde_json::to_string(&save_checkpoint(&state, seed)).unwrap();
        let doc: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut resumed = load_checkpoint(&model, doc).unwrap();
        let tail = continue_chain(&model, &data, &cfg, seed, &mut resumed).unwrap();

        let full_tail: Vec<_> = full
            .records
            .iter()
            .filter(|r| r.sweep > 9)
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let resumed_tail: Vec<_> = tail
            .records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        assert_eq!(full_tail, resumed_tail);
    }

    #[test]
    fn rejects_out_of_support_data() {
        let mut model = micro_model(LambdaMode::Gp);
        model.constraint = Some(
            MarginalConstraint::new(
                ConstraintFamily::Exponential,
                PriorSpec::Gamma { shape: 0.1, rate: 0.1 },
                1,
            )
            .unwrap(),
        );
        model.centering =
            CenteringModel::new(CenteringVariant::StandardizedMoments, NiguPrior {
                mu0: 0.0,
                k0: 0.001,
                alpha0: 0.001,
                beta0: 0.001,
            })
            .unwrap();
        let data = ObsData { xa: vec![vec![0.0]], xac: vec![vec![1.0]] };
        let cfg = micro_cfg();
        assert!(matches!(
            init_state(&model, &data, &cfg),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn trace_length_respects_thinning() {
        let model = micro_model(LambdaMode::Gp);
        let data = micro_data();
        let mut cfg = micro_cfg();
        cfg.iterations = 21;
        cfg.burn_in = 5;
        cfg.thin = 4;
        let (trace, _) = run_chain(&model, &data, &cfg, 1).unwrap();
        assert_eq!(trace.records.len(), 4);
    }
}
