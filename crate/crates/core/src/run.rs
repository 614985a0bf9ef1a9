//! Run orchestration: execute the simulate / fit / evaluate / diagnose /
//! split pipelines from a configuration and persist their artifacts.
//!
//! Every artifact is a pure function of (config, seed): traces are written
//! with shortest-round-trip decimal encoding, file layouts are fixed, and
//! rerunning a command reproduces its outputs byte for byte.

use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::centering::CenteringParams;
use crate::config::RunConfig;
use crate::constraints::Phi;
use crate::data::{ingest_csv, split_dataset, write_csv, Dataset};
use crate::density::{
    fit_parametric_baseline, heldout_loglik, DrawMode, EvalGrid, GridAxis,
    HeldoutOptions, HeldoutScores,
};
use crate::diagnostics::{ess_report, EssReport};
use crate::error::{Error, Result};
use crate::model::{LocationMap, Model};
use crate::posterior::{
    median_pairwise_distance, run_chain, save_checkpoint, McmcConfig, ObsData, PosteriorSample,
    Trace,
};
use crate::prior_sim::simulate;
use crate::rng::{domain, RngKey};

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
}

fn apply_overrides(cfg: &mut RunConfig, over: &Overrides) {
    if let Some(s) = over.seed {
        cfg.seed = s;
    }
    if let Some(it) = over.iterations {
        cfg.mcmc.iterations = it;
        if cfg.mcmc.burn_in >= it {
            cfg.mcmc.burn_in = it / 5;
        }
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Column-ordered rows (constrained columns first) for region construction.
fn obs_rows(data: &ObsData) -> Vec<Vec<f64>> {
    data.xa
        .iter()
        .zip(&data.xac)
        .map(|(a, ac)| a.iter().chain(ac.iter()).cloned().collect())
        .collect()
}

fn eval_region(cfg: &RunConfig, train: &ObsData, dim: usize) -> Result<EvalGrid> {
    let counts: Vec<usize> = if cfg.eval.grid_points.len() == dim {
        cfg.eval.grid_points.clone()
    } else if cfg.eval.grid_points.len() == 1 {
        vec![cfg.eval.grid_points[0]; dim]
    } else {
        return Err(Error::Config(format!(
            "grid_points has {} entries for {} axes",
            cfg.eval.grid_points.len(),
            dim
        )));
    };
    match &cfg.eval.bounds {
        Some(bounds) => {
            if bounds.len() != dim {
                return Err(Error::Config(format!(
                    "bounds has {} entries for {} axes",
                    bounds.len(),
                    dim
                )));
            }
            EvalGrid::new(
                bounds
                    .iter()
                    .zip(&counts)
                    .map(|([lo, hi], n)| GridAxis::new(*lo, *hi, *n))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
        None => EvalGrid::from_data_padded(&obs_rows(train), &counts, cfg.eval.region_pad),
    }
}

/// Probe set: a coarse subgrid of the evaluation region plus the region
/// midpoint (appended last, reported as "the midpoint").
fn probe_points(cfg: &RunConfig, region: &EvalGrid) -> Vec<Vec<f64>> {
    if let Some(p) = &cfg.mcmc.probes {
        return p.clone();
    }
    let per_axis = cfg.mcmc.probe_grid.max(1);
    let axis_nodes: Vec<Vec<f64>> = region
        .axes
        .iter()
        .map(|a| {
            (0..per_axis)
                .map(|i| a.lo + (a.hi - a.lo) * (i as f64 + 0.5) / per_axis as f64)
                .collect()
        })
        .collect();
    let mut probes = Vec::new();
    if region.axes.len() == 2 {
        for x in &axis_nodes[0] {
            for y in &axis_nodes[1] {
                probes.push(vec![*x, *y]);
            }
        }
    } else {
        for (i, nodes) in axis_nodes.iter().enumerate() {
            let _ = i;
            let _ = nodes;
        }
    }
    let midpoint: Vec<f64> = region.axes.iter().map(|a| 0.5 * (a.lo + a.hi)).collect();
    probes.push(midpoint);
    probes
}

/// Everything `fit` resolved from config plus data before sampling.
pub struct Prepared {
    pub model: Model,
    pub mcmc: McmcConfig,
    pub train: ObsData,
    pub test: Option<ObsData>,
    pub region: EvalGrid,
    pub train_dataset: Dataset,
}

/// Load data, build the model, resolve the evaluation region, probes, the
/// standardization map, and the lengthscale prior location.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let family = cfg.constraint.as_ref().map(|c| c.family);
    let dataset = ingest_csv(Path::new(&cfg.data.path), &cfg.data.constrained, family)?;
    let mut model = cfg.build_model(dataset.dim())?;
    let constrained_for_split: Vec<usize> = cfg.data.constrained.clone();
    let train = if model.is_unconstrained() {
        // Baseline: all coordinates unconstrained, original column order.
        ObsData { xa: vec![Vec::new(); dataset.len()], xac: dataset.rows.clone() }
    } else {
        dataset.to_obs(&constrained_for_split)?
    };
    let test = match &cfg.data.test_path {
        Some(p) => {
            let t = ingest_csv(Path::new(p), &cfg.data.constrained, family)?;
            Some(if model.is_unconstrained() {
                ObsData { xa: vec![Vec::new(); t.len()], xac: t.rows.clone() }
            } else {
                t.to_obs(&constrained_for_split)?
            })
        }
        None => None,
    };

    if cfg.gp.standardize {
        model.location_map = Some(LocationMap::from_data(&obs_rows(&train))?);
    }
    let mut mcmc = cfg.build_mcmc();
    let region = eval_region(cfg, &train, dataset.dim())?;
    if mcmc.probes.is_empty() {
        mcmc.probes = probe_points(cfg, &region);
    }
    if cfg.gp.lengthscale_prior.log_location.is_none() {
        let locations: Vec<Vec<f64>> = train
            .xa
            .iter()
            .zip(&train.xac)
            .map(|(a, ac)| model.location(a, ac))
            .collect();
        let med = median_pairwise_distance(&locations).unwrap_or(1.0);
        mcmc.lengthscale_prior.log_location = med.ln();
    }
    train.validate(&model)?;
    Ok(Prepared { model, mcmc, train, test, region, train_dataset: dataset })
}

fn theta_columns(theta: &CenteringParams) -> Vec<(String, f64)> {
    match theta {
        CenteringParams::Correlated { rho, mu2, scale_sq } => vec![
            ("rho".into(), *rho),
            ("mu2".into(), *mu2),
            ("scale_sq".into(), *scale_sq),
        ],
        CenteringParams::Independent { means, vars } => {
            let mut cols = Vec::new();
            for (i, m) in means.iter().enumerate() {
                cols.push((format!("mu_{}", i), *m));
            }
            for (i, v) in vars.iter().enumerate() {
                cols.push((format!("var_{}", i), *v));
            }
            cols
        }
    }
}

fn phi_columns(phi: &Option<Phi>) -> Vec<(String, f64)> {
    match phi {
        Some(Phi::Gaussian { mean, var }) => {
            vec![("phi_mean".into(), *mean), ("phi_var".into(), *var)]
        }
        Some(Phi::Lognormal { mu, sigma_sq }) => {
            vec![("phi_mu".into(), *mu), ("phi_sigma_sq".into(), *sigma_sq)]
        }
        Some(Phi::Exponential { rate }) => vec![("phi_rate".into(), *rate)],
        None => Vec::new(),
    }
}

/// Write the scalar trace as CSV: sweep, theta, phi, lengthscale, rejected
/// totals, log-target components, lambda at the probe points.
pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let first = trace
        .records
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty trace".into()))?;
    let mut header: Vec<String> = vec!["sweep".into()];
    header.extend(theta_columns(&first.theta).into_iter().map(|(n, _)| n));
    header.extend(phi_columns(&first.phi).into_iter().map(|(n, _)| n));
    header.extend([
        "lengthscale".to_string(),
        "y_total".to_string(),
        "log_lambda_lik".to_string(),
        "log_marginal_lik".to_string(),
        "log_centering_lik".to_string(),
        "log_theta_prior".to_string(),
        "log_phi_prior".to_string(),
        "log_gp_prior".to_string(),
    ]);
    for i in 0..first.lambda_probe.len() {
        header.push(format!("lambda_probe_{}", i));
    }
    writeln!(w, "{}", header.join(","))?;
    for r in &trace.records {
        let mut cells: Vec<String> = vec![r.sweep.to_string()];
        cells.extend(theta_columns(&r.theta).into_iter().map(|(_, v)| v.to_string()));
        cells.extend(phi_columns(&r.phi).into_iter().map(|(_, v)| v.to_string()));
        cells.push(r.lengthscale.to_string());
        cells.push(r.y_total.to_string());
        cells.push(r.log_parts.lambda_lik.to_string());
        cells.push(r.log_parts.marginal_lik.to_string());
        cells.push(r.log_parts.centering_lik.to_string());
        cells.push(r.log_parts.theta_prior.to_string());
        cells.push(r.log_parts.phi_prior.to_string());
        cells.push(r.log_parts.gp_prior.to_string());
        for v in &r.lambda_probe {
            cells.push(v.to_string());
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn write_meta(dir: &Path, cfg: &RunConfig, prep: &Prepared, command: &str) -> Result<()> {
    let meta = serde_json::json!({
        "command": command,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": serde_json::from_str::<serde_json::Value>(&cfg.to_json())?,
        "resolved": {
            "lengthscale_prior_log_location": prep.mcmc.lengthscale_prior.log_location,
            "region": prep.region,
            "probes": prep.mcmc.probes,
            "n_train": prep.train.len(),
        },
    });
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Fit the configured model: trace CSV, metadata, checkpoint, and the
/// per-sample archive used by `evaluate`.
pub fn fit(mut cfg: RunConfig, over: &Overrides) -> Result<PathBuf> {
    apply_overrides(&mut cfg, over);
    cfg.validate()?;
    let prep = prepare(&cfg)?;
    let dir = out_dir(&cfg)?;
    let (trace, state) = run_chain(&prep.model, &prep.train, &prep.mcmc, cfg.seed)?;
    write_trace_csv(&dir.join("trace.csv"), &trace)?;
    let checkpoint = save_checkpoint(&state, cfg.seed);
    fs::write(
        dir.join("checkpoint.json"),
        serde_json::to_string(&checkpoint)?,
    )?;
    let mut archive = BufWriter::new(fs::File::create(dir.join("samples.jsonl"))?);
    for r in &trace.records {
        if let Some(s) = &r.sample {
            writeln!(archive, "{}", serde_json::to_string(s)?)?;
        }
    }
    archive.flush()?;
    write_meta(&dir, &cfg, &prep, "fit")?;
    Ok(dir)
}

fn read_samples(dir: &Path) -> Result<Vec<PosteriorSample>> {
    let path = dir.join("samples.jsonl");
    let file = fs::File::open(&path).map_err(|e| {
        Error::Data(format!(
            "cannot open {} (run `fit` first): {}",
            path.display(),
            e
        ))
    })?;
    let mut samples = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            samples.push(serde_json::from_str(&line)?);
        }
    }
    if samples.is_empty() {
        return Err(Error::Data("empty sample archive".into()));
    }
    Ok(samples)
}

/// Write a surface in long format: one row per grid node, coordinates then
/// density.
pub fn write_surface_csv(path: &Path, surface: &crate::density::DensitySurface, names: &[String]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{},density", names.join(","))?;
    let nodes0 = surface.grid.axes[0].nodes();
    let nodes1 = surface.grid.axes[1].nodes();
    for (i, a) in nodes0.iter().enumerate() {
        for (j, b) in nodes1.iter().enumerate() {
            writeln!(w, "{},{},{}", a, b, surface.values[i][j])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluate a fitted run: posterior mean density surface, held-out
/// log-likelihoods (when test data is configured), and a log-likelihood
/// table row per scored model.
pub fn evaluate(mut cfg: RunConfig, over: &Overrides) -> Result<PathBuf> {
    apply_overrides(&mut cfg, over);
    cfg.validate()?;
    let prep = prepare(&cfg)?;
    let dir = out_dir(&cfg)?;
    let samples = read_samples(&dir)?;
    let max = cfg.eval.max_eval_samples;
    let use_idx: Vec<usize> = if max == 0 || max >= samples.len() {
        (0..samples.len()).collect()
    } else {
        (0..max).map(|i| i * samples.len() / max).collect()
    };
    let surface_samples: Vec<&PosteriorSample> = use_idx.iter().map(|&i| &samples[i]).collect();
    let key = RngKey::root(cfg.seed).child(domain::EVAL);
    let mode = if cfg.eval.conditional_mean { DrawMode::Mean } else { DrawMode::Draw };

    if prep.region.axes.len() == 2 {
        let surface = crate::density::posterior_mean_density(
            &prep.model,
            &surface_samples,
            &prep.region,
            mode,
            &key,
        )?;
        let names: Vec<String> = {
            let ds = &prep.train_dataset;
            let mut constrained: Vec<String> = cfg
                .data
                .constrained
                .iter()
                .map(|&i| ds.columns[i].clone())
                .collect();
            let unconstrained: Vec<String> = ds
                .columns
                .iter()
                .enumerate()
                .filter(|(i, _)| !cfg.data.constrained.contains(i))
                .map(|(_, c)| c.clone())
                .collect();
            if prep.model.is_unconstrained() {
                ds.columns.clone()
            } else {
                constrained.extend(unconstrained);
                constrained
            }
        };
        write_surface_csv(&dir.join("surface.csv"), &surface, &names)?;
    }

    // Held-out scoring needs test data: an explicit test file or a split.
    let test = match (&prep.test, &cfg.split) {
        (Some(t), _) => Some(t.clone()),
        (None, Some(s)) => {
            let (_, te) = split_dataset(&prep.train_dataset, s.train, s.test, cfg.seed)?;
            Some(if prep.model.is_unconstrained() {
                ObsData { xa: vec![Vec::new(); te.len()], xac: te.rows.clone() }
            } else {
                te.to_obs(&cfg.data.constrained)?
            })
        }
        (None, None) => None,
    };

    if let Some(test) = test {
        let opts = HeldoutOptions {
            conditional_mean: cfg.eval.conditional_mean,
            max_samples: cfg.eval.max_eval_samples,
        };
        let mut region = prep.region.clone();
        // Ensure the region contains the test points.
        for (i, axis) in region.axes.iter_mut().enumerate() {
            for (xa, xac) in test.xa.iter().zip(&test.xac) {
                let v = if i < xa.len() { xa[i] } else { xac[i - xa.len()] };
                axis.lo = axis.lo.min(v - 1e-9);
                axis.hi = axis.hi.max(v + 1e-9);
            }
        }
        // Quadrature resolution for the normalizer axes.
        let dim_a = prep.model.dim_a();
        for (i, axis) in region.axes.iter_mut().enumerate() {
            if i >= dim_a || prep.model.is_unconstrained() {
                axis.n = axis.n.max(cfg.eval.quad_points);
            }
        }
        let all: Vec<&PosteriorSample> = samples.iter().collect();
        let scores = heldout_loglik(&prep.model, &all, &test, &region, opts, &key)?;
        fs::write(
            dir.join("heldout.json"),
            serde_json::to_string_pretty(&scores)?,
        )?;

        let mut table = String::from(
            "model,joint_mean_log,marginal_mean_log,joint_log_mean,marginal_log_mean\n",
        );
        let name = if prep.model.is_unconstrained() { "unconstrained" } else { "constrained" };
        table.push_str(&format!(
            "{},{},{},{},{}\n",
            name,
            scores.joint_mean_log,
            scores.marginal_mean_log,
            scores.joint_log_mean,
            scores.marginal_log_mean
        ));
        // The bivariate-normal parametric baseline applies to positive
        // constrained data (it models the log transform).
        if !prep.model.is_unconstrained()
            && prep.model.dim_a() == 1
            && prep.model.dim_ac == 1
            && prep.train.xa.iter().all(|r| r[0] > 0.0)
            && test.xa.iter().all(|r| r[0] > 0.0)
        {
            if let Ok((joint, marginal)) = fit_parametric_baseline(&prep.train, &test) {
                table.push_str(&format!(
                    "parametric,{},{},{},{}\n",
                    joint, marginal, joint, marginal
                ));
            }
        }
        fs::write(dir.join("logliks.csv"), table)?;
    }
    write_meta(&dir, &cfg, &prep, "evaluate")?;
    Ok(dir)
}

/// Read a trace CSV back as named columns.
pub fn read_trace_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record?;
        for (j, cell) in record.iter().enumerate() {
            cols[j].push(cell.parse().map_err(|_| {
                Error::Data(format!("trace cell '{}' is not numeric", cell))
            })?);
        }
    }
    Ok((names, cols))
}

/// Diagnose a fitted run: ESS report over the lambda probes (JSON) and
/// per-scalar traceplot CSVs.
pub fn diagnose(mut cfg: RunConfig, over: &Overrides) -> Result<PathBuf> {
    apply_overrides(&mut cfg, over);
    cfg.validate()?;
    let dir = out_dir(&cfg)?;
    let trace_path = dir.join("trace.csv");
    let (names, cols) = read_trace_columns(&trace_path)?;
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let probes: Vec<Vec<f64>> = serde_json::from_value(
        meta.pointer("/resolved/probes")
            .cloned()
            .unwrap_or(serde_json::Value::Array(vec![])),
    )?;
    let probe_cols: Vec<(usize, usize)> = names
        .iter()
        .enumerate()
        .filter_map(|(j, n)| {
            n.strip_prefix("lambda_probe_")
                .and_then(|s| s.parse::<usize>().ok())
                .map(|k| (k, j))
        })
        .collect();
    let report: Option<EssReport> = if !probe_cols.is_empty() && probes.len() == probe_cols.len() {
        let chains: Vec<Vec<f64>> = probe_cols.iter().map(|(_, j)| cols[*j].clone()).collect();
        // The midpoint probe is appended last by construction.
        Some(ess_report(&probes, &chains, probes.len() - 1)?)
    } else {
        None
    };
    let scalar_ess: Vec<serde_json::Value> = names
        .iter()
        .zip(&cols)
        .filter(|(n, _)| !n.starts_with("lambda_probe_") && n.as_str() != "sweep")
        .map(|(n, c)| {
            let e = crate::diagnostics::ess(c).ok();
            serde_json::json!({ "name": n, "ess": e })
        })
        .collect();
    let doc = serde_json::json!({
        "iterations": cols.first().map(|c| c.len()).unwrap_or(0),
        "scalars": scalar_ess,
        "lambda_probes": report,
    });
    fs::write(dir.join("ess.json"), serde_json::to_string_pretty(&doc)?)?;

    let plot_dir = dir.join("traceplots");
    fs::create_dir_all(&plot_dir)?;
    let sweep_col = names.iter().position(|n| n == "sweep");
    for (j, name) in names.iter().enumerate() {
        if name == "sweep" {
            continue;
        }
        let mut w = BufWriter::new(fs::File::create(plot_dir.join(format!("{}.csv", name)))?);
        writeln!(w, "sweep,{}", name)?;
        for (i, v) in cols[j].iter().enumerate() {
            let sweep = sweep_col.map(|sc| cols[sc][i]).unwrap_or(i as f64);
            writeln!(w, "{},{}", sweep, v)?;
        }
        w.flush()?;
    }
    Ok(dir)
}

/// Exact prior simulation: accepted draws as CSV plus a JSON sidecar with
/// the drawn parameters, per-observation rejection counts, and the seed.
pub fn simulate_cmd(mut cfg: RunConfig, over: &Overrides) -> Result<PathBuf> {
    apply_overrides(&mut cfg, over);
    cfg.validate()?;
    let n = cfg
        .simulate
        .as_ref()
        .map(|s| s.n)
        .ok_or_else(|| Error::Config("simulate needs a {\"simulate\": {\"n\": ...}} section".into()))?;
    // Simulation does not need a dataset; build the model at the declared
    // dimensionality (constrained block + one unconstrained coordinate each).
    let dim = cfg.data.constrained.len() + 1;
    let model = cfg.build_model(dim.max(2))?;
    let dir = out_dir(&cfg)?;
    let key = RngKey::root(cfg.seed).child(domain::SIM);
    let sim = simulate(&model, n, cfg.mcmc.round_cap, &key)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("sim.csv"))?);
    let mut header = Vec::new();
    for i in 0..model.dim_a() {
        header.push(format!("xa_{}", i));
    }
    for i in 0..model.dim_ac {
        header.push(format!("xac_{}", i));
    }
    writeln!(w, "{}", header.join(","))?;
    for (xa, xac) in sim.accepted_xa.iter().zip(&sim.accepted_xac) {
        let cells: Vec<String> = xa.iter().chain(xac.iter()).map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    let sidecar = serde_json::json!({
        "seed": cfg.seed,
        "n": n,
        "theta": sim.theta,
        "phi": sim.phi,
        "rejected_counts": sim.rejected_counts(),
        "rounds": sim.rounds,
    });
    fs::write(dir.join("sim_meta.json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(dir)
}

/// Split the dataset into train/test files, deterministic in the seed.
pub fn split_cmd(mut cfg: RunConfig, over: &Overrides) -> Result<PathBuf> {
    apply_overrides(&mut cfg, over);
    cfg.validate()?;
    let s = cfg
        .split
        .as_ref()
        .ok_or_else(|| Error::Config("split needs a {\"split\": ...} section".into()))?;
    let family = cfg.constraint.as_ref().map(|c| c.family);
    let dataset = ingest_csv(Path::new(&cfg.data.path), &cfg.data.constrained, family)?;
    let (train, test) = split_dataset(&dataset, s.train, s.test, cfg.seed)?;
    let dir = out_dir(&cfg)?;
    write_csv(&dir.join("train.csv"), &train)?;
    write_csv(&dir.join("test.csv"), &test)?;
    Ok(dir)
}

/// Materialize a bundled recipe: config file plus generated datasets for the
/// synthetic recipes.
pub fn recipe_cmd(recipe: crate::config::Recipe, dir: &Path, n: Option<usize>, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (mut cfg, data) = crate::config::recipe_config(recipe, n, seed);
    cfg.output = dir.join("out").to_string_lossy().into_owned();
    if let Some((train, test)) = data {
        let train_path = dir.join("train.csv");
        let test_path = dir.join("test.csv");
        write_csv(&train_path, &train)?;
        write_csv(&test_path, &test)?;
        cfg.data.path = train_path.to_string_lossy().into_owned();
        cfg.data.test_path = Some(test_path.to_string_lossy().into_owned());
    }
    fs::write(dir.join("config.json"), cfg.to_json())?;
    Ok(())
}

/// Convenience for tests and the acceptance suite: fit and score a prepared
/// model/data pair directly, without touching disk.
pub fn fit_and_score(
    model: &Model,
    mcmc: &McmcConfig,
    train: &ObsData,
    test: &ObsData,
    region: &EvalGrid,
    opts: HeldoutOptions,
    seed: u64,
) -> Result<(Trace, HeldoutScores)> {
    let (trace, _) = run_chain(model, train, mcmc, seed)?;
    let samples: Vec<&PosteriorSample> = trace
        .records
        .iter()
        .filter_map(|r| r.sample.as_ref())
        .collect();
    let key = RngKey::root(seed).child(domain::EVAL);
    let scores = heldout_loglik(model, &samples, test, region, opts, &key)?;
    Ok((trace, scores))
}
