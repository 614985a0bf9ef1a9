//! Effective sample size, trace summaries, and the joint-distribution
//! ("getting it right") correctness harness for the sampler.

use serde::{Deserialize, Serialize};

use crate::centering::CenteringParams;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::posterior::{
    gibbs_sweep, redraw_data, ChainState, McmcConfig, ObsData, SamplerMutation, StepState,
};
use crate::prior_sim::{sigmoid, simulate_with_params};
use crate::rng::{domain, RngKey};

/// Effective sample size by the initial monotone sequence estimator:
/// pair adjacent autocovariances, keep while positive, enforce monotone
/// nonincreasing, and cap the result at the chain length.
pub fn ess(chain: &[f64]) -> Result<f64> {
    let n = chain.len();
    if n < 10 {
        return Err(Error::DegenerateChain(format!(
            "need at least 10 points, got {}",
            n
        )));
    }
    let nf = n as f64;
    let mean = chain.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let gamma = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / nf
    };
    let g0 = gamma(0);
    if g0 <= 0.0 || !g0.is_finite() {
        return Err(Error::DegenerateChain(
            "zero or non-finite chain variance".into(),
        ));
    }
    // Sum of paired autocovariances Gamma_k = gamma(2k) + gamma(2k+1),
    // truncated at the first nonpositive pair, then made nonincreasing.
    let mut pair_sums = Vec::new();
    let mut k = 0usize;
    while 2 * k + 1 < n {
        let pair = gamma(2 * k) + gamma(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        pair_sums.push(pair);
        k += 1;
    }
    let mut min_so_far = f64::MAX;
    let mut total = 0.0;
    for p in pair_sums {
        min_so_far = min_so_far.min(p);
        total += min_so_far;
    }
    let asym_var = 2.0 * total - g0;
    let ess = if asym_var > 0.0 { nf * g0 / asym_var } else { nf };
    Ok(ess.min(nf))
}

/// Per-probe ESS values with the min/max/midpoint summary reported for
/// latent-function mixing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EssReport {
    pub iterations: usize,
    pub probes: Vec<ProbeEss>,
    pub min: f64,
    pub max: f64,
    pub midpoint: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeEss {
    pub point: Vec<f64>,
    pub ess: f64,
}

/// ESS per probe column; `midpoint_index` names the probe reported as "ESS
/// at the midpoint".
pub fn ess_report(
    probe_points: &[Vec<f64>],
    probe_chains: &[Vec<f64>],
    midpoint_index: usize,
) -> Result<EssReport> {
    if probe_points.len() != probe_chains.len() || probe_points.is_empty() {
        return Err(Error::InvalidParameter(
            "probe metadata and chains must align and be nonempty".into(),
        ));
    }
    if midpoint_index >= probe_points.len() {
        return Err(Error::InvalidParameter("midpoint index out of range".into()));
    }
    let mut probes = Vec::with_capacity(probe_points.len());
    for (p, chain) in probe_points.iter().zip(probe_chains) {
        probes.push(ProbeEss { point: p.clone(), ess: ess(chain)? });
    }
    let min = probes.iter().map(|p| p.ess).fold(f64::INFINITY, f64::min);
    let max = probes.iter().map(|p| p.ess).fold(f64::NEG_INFINITY, f64::max);
    Ok(EssReport {
        iterations: probe_chains[0].len(),
        midpoint: probes[midpoint_index].ess,
        probes,
        min,
        max,
    })
}

/// Settings for the joint-distribution test: a small model, a probe
/// location, and how many samples each simulator contributes.
#[derive(Clone, Debug)]
pub struct GewekeConfig {
    pub n_obs: usize,
    pub samples: usize,
    pub probe: Vec<f64>,
    pub round_cap: usize,
    pub seed: u64,
    pub mutation: SamplerMutation,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GewekeStat {
    pub name: String,
    pub forward_mean: f64,
    pub successive_mean: f64,
    pub z: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GewekeReport {
    pub stats: Vec<GewekeStat>,
}

impl GewekeReport {
    pub fn max_abs_z(&self) -> f64 {
        self.stats.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

fn stat_names(model: &Model) -> Vec<&'static str> {
    let mut names = vec!["rho", "rho_sq", "mu2", "log_scale_sq", "sigma_probe", "y_total"];
    if model
        .constraint
        .as_ref()
        .map(|c| !c.phi_prior.is_dirac())
        .unwrap_or(false)
    {
        names.push("phi_loc");
        names.push("phi_log_scale");
    }
    names
}

fn collect_stats(
    model: &Model,
    theta: &CenteringParams,
    phi: Option<&crate::constraints::Phi>,
    y_total: usize,
    sigma_probe: f64,
) -> Vec<f64> {
    let (rho, mu2, scale_sq) = match theta {
        CenteringParams::Correlated { rho, mu2, scale_sq } => (*rho, *mu2, *scale_sq),
        CenteringParams::Independent { means, vars } => (0.0, means[0], vars[0]),
    };
    let mut stats = vec![
        rho,
        rho * rho,
        mu2,
        scale_sq.ln(),
        sigma_probe,
        y_total as f64,
    ];
    if model
        .constraint
        .as_ref()
        .map(|c| !c.phi_prior.is_dirac())
        .unwrap_or(false)
    {
        match phi {
            Some(crate::constraints::Phi::Gaussian { mean, var }) => {
                stats.push(*mean);
                stats.push(var.ln());
            }
            Some(crate::constraints::Phi::Lognormal { mu, sigma_sq }) => {
                stats.push(*mu);
                stats.push(sigma_sq.ln());
            }
            Some(crate::constraints::Phi::Exponential { rate }) => {
                stats.push(rate.ln());
                stats.push(0.0);
            }
            None => {
                stats.push(0.0);
                stats.push(0.0);
            }
        }
    }
    stats
}

/// Joint-distribution correctness test. The forward simulator draws
/// (theta, phi) from the prior and data through the exact prior sampler; the
/// successive-conditional simulator alternates one Gibbs sweep with a data
/// redraw at the current parameters. If the sampler leaves the posterior
/// invariant, both produce the same joint law, so every statistic's mean
/// must agree up to Monte Carlo error; z-scores use an ESS-adjusted standard
/// error for the autocorrelated successive chain.
pub fn geweke_test(model: &Model, cfg: &GewekeConfig) -> Result<GewekeReport> {
    if !model.lambda_mode.is_gp() {
        return Err(Error::InvalidParameter(
            "the joint-distribution test exercises the GP path".into(),
        ));
    }
    let names = stat_names(model);
    let n_stats = names.len();
    let key = RngKey::root(cfg.seed).child(domain::GEWEKE);
    let probe_loc = {
        let split = model.dim_a();
        model.location(&cfg.probe[..split], &cfg.probe[split..])
    };

    // Forward: independent draws of (params, data, augmentation).
    let fwd_key = key.child(1);
    let mut forward: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.samples); n_stats];
    for s in 0..cfg.samples {
        let skey = fwd_key.child(s as u64);
        let mut params_rng = skey.child(domain::PARAMS).rng();
        let (theta, phi) = model.sample_params_prior(&mut params_rng)?;
        let sim = simulate_with_params(model, &theta, phi, cfg.n_obs, cfg.round_cap, &skey)?;
        let mut probe_rng = skey.child(domain::PROBE).rng();
        let lam = sim.gp.draw_at(&[probe_loc.clone()], &mut probe_rng)?[0];
        let y_total: usize = sim.rejected_counts().iter().sum();
        let stats = collect_stats(model, &sim.theta, sim.phi.as_ref(), y_total, sigmoid(lam));
        for (col, v) in forward.iter_mut().zip(stats) {
            col.push(v);
        }
    }

    // Successive-conditional: start from a forward draw, then alternate
    // sweep and data redraw.
    let succ_key = key.child(2);
    let init_key = succ_key.child(0);
    let mut params_rng = init_key.child(domain::PARAMS).rng();
    let (theta0, phi0) = model.sample_params_prior(&mut params_rng)?;
    let sim0 = simulate_with_params(model, &theta0, phi0, cfg.n_obs, cfg.round_cap, &init_key)?;
    let mut data = ObsData { xa: sim0.accepted_xa.clone(), xac: sim0.accepted_xac.clone() };
    let mut mcfg = McmcConfig::new(2, 1);
    mcfg.round_cap = cfg.round_cap;
    mcfg.update_lengthscale = false;
    let mut state = ChainState {
        theta: sim0.theta.clone(),
        phi: sim0.phi,
        gp: sim0.gp.clone(),
        rejected: sim0.rejected.clone(),
        n_obs: cfg.n_obs,
        sweep: 0,
        steps: StepState::new(mcfg.hmc.step_size),
    };
    // Canonical layout: observations first, then rejected points.
    {
        let n = cfg.n_obs;
        let total = state.gp.len();
        let mut keep: Vec<usize> = Vec::with_capacity(total);
        let mut rej_idx: Vec<usize> = Vec::new();
        // The prior simulation interleaves accepted/rejected; rebuild the
        // canonical order from the locations.
        let loc_of = |xa: &Vec<f64>, xac: &Vec<f64>| model.location(xa, xac);
        let pts = state.gp.points().to_vec();
        for (xa, xac) in data.xa.iter().zip(&data.xac) {
            let loc = loc_of(xa, xac);
            let idx = pts.iter().position(|p| *p == loc).expect("accepted point present");
            keep.push(idx);
        }
        for (i, ys) in state.rejected.iter().enumerate() {
            for y in ys {
                let loc = loc_of(&data.xa[i], y);
                let idx = pts.iter().position(|p| *p == loc).expect("rejected point present");
                rej_idx.push(idx);
            }
        }
        keep.extend(rej_idx);
        debug_assert_eq!(keep.len(), n + state.y_total());
        state.gp.restrict(&keep)?;
    }

    let mut successive: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.samples); n_stats];
    for s in 0..cfg.samples {
        let skey = succ_key.child((s + 1) as u64);
        gibbs_sweep(model, &mut state, &data, &mcfg, false, cfg.mutation, &skey)?;
        data = redraw_data(model, &mut state, cfg.round_cap, &skey.child(domain::REDRAW))?;
        let mut probe_rng = skey.child(domain::PROBE).rng();
        let lam = state.gp.draw_at(&[probe_loc.clone()], &mut probe_rng)?[0];
        let stats = collect_stats(
            model,
            &state.theta,
            state.phi.as_ref(),
            state.y_total(),
            sigmoid(lam),
        );
        for (col, v) in successive.iter_mut().zip(stats) {
            col.push(v);
        }
    }

    let mut stats = Vec::with_capacity(n_stats);
    for i in 0..n_stats {
        let f = &forward[i];
        let s = &successive[i];
        let nf = f.len() as f64;
        let mean_f = f.iter().sum::<f64>() / nf;
        let var_f = f.iter().map(|x| (x - mean_f).powi(2)).sum::<f64>() / nf;
        let mean_s = s.iter().sum::<f64>() / s.len() as f64;
        let var_s = s.iter().map(|x| (x - mean_s).powi(2)).sum::<f64>() / s.len() as f64;
        // Forward draws are independent; the successive chain is not.
        let ess_s = ess(s).unwrap_or(1.0);
        let se = (var_f / nf + var_s / ess_s).sqrt();
        let z = if se > 0.0 { (mean_f - mean_s) / se } else { 0.0 };
        stats.push(GewekeStat {
            name: names[i].to_string(),
            forward_mean: mean_f,
            successive_mean: mean_s,
            z,
        });
    }
    Ok(GewekeReport { stats })
}
