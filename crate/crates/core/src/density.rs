//! Density-map evaluation: grid surfaces per posterior sample, posterior
//! mean densities, held-out log-likelihood scoring, and the parametric and
//! unconstrained baselines.
//!
//! The joint density at a posterior draw is
//! `p_A(x_A | phi) pi0(x_Ac | x_A) sigma(lambda) / Z(x_A)` with `Z` the
//! normalizer over the unconstrained block. `Z` exists nowhere in the
//! samplers; here it is computed by trapezoid quadrature on a compact
//! evaluation region. Latent values at grid and test locations are drawn
//! from the GP conditional per posterior sample, one joint draw per
//! constrained slice. Slices are drawn independently of each other, which
//! leaves every per-slice law and every reported posterior average exactly
//! as a single coherent draw would, and keeps evaluation quadratic rather
//! than cubic in the grid size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::gp::GpRealization;
use crate::model::Model;
use crate::posterior::{ObsData, PosteriorSample};
use crate::prior_sim::{log_sigmoid, sigmoid};
use crate::rng::{domain, RngKey};

/// Smallest normalizer treated as nonzero; below it a slice is degenerate
/// and gets flagged instead of divided by.
const MIN_NORMALIZER: f64 = 1e-300;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        let axis = GridAxis { lo, hi, n };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo >= self.hi {
            return Err(Error::InvalidParameter(format!(
                "axis bounds [{}, {}] must be finite and ordered",
                self.lo, self.hi
            )));
        }
        if self.n < 16 {
            return Err(Error::InvalidParameter(format!(
                "axis needs at least 16 points, got {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n).map(|i| self.lo + h * i as f64).collect()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n)
            .map(|i| if i == 0 || i == self.n - 1 { 0.5 * h } else { h })
            .collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Rectangular evaluation region over the constrained axes followed by the
/// unconstrained axes. Surface evaluation is supported in two dimensions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalGrid {
    pub axes: Vec<GridAxis>,
}

impl EvalGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one axis".into()));
        }
        for a in &axes {
            a.validate()?;
        }
        Ok(EvalGrid { axes })
    }

    /// Data bounding box expanded by `pad` per axis: the compact evaluation
    /// region (the experiments never state one).
    pub fn from_data_padded(rows: &[Vec<f64>], counts: &[usize], pad: f64) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if d == 0 || counts.len() != d {
            return Err(Error::InvalidParameter(
                "grid construction needs data and one count per axis".into(),
            ));
        }
        let mut axes = Vec::with_capacity(d);
        for j in 0..d {
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-6);
            axes.push(GridAxis::new(lo - pad * span, hi + pad * span, counts[j])?);
        }
        EvalGrid::new(axes)
    }
}

/// A joint density on a two-dimensional grid with the normalizers that
/// produced it: `values[i][j]` is the density at (axis-0 node i, axis-1
/// node j); `normalizers[i]` is the slice normalizer (constrained) or the
/// global one repeated (baseline).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensitySurface {
    pub grid: EvalGrid,
    pub values: Vec<Vec<f64>>,
    pub normalizers: Vec<f64>,
    pub flagged_slices: Vec<usize>,
}

impl DensitySurface {
    /// Two-dimensional trapezoid integral of the surface.
    pub fn integral(&self) -> f64 {
        let w0 = self.grid.axes[0].weights();
        let w1 = self.grid.axes[1].weights();
        let mut total = 0.0;
        for (row, wi) in self.values.iter().zip(&w0) {
            let inner: f64 = row.iter().zip(&w1).map(|(v, wj)| v * wj).sum();
            total += wi * inner;
        }
        total
    }

    /// Marginal over axis 1, at the axis-0 nodes.
    pub fn marginal_axis0(&self) -> Vec<f64> {
        let w1 = self.grid.axes[1].weights();
        self.values
            .iter()
            .map(|row| row.iter().zip(&w1).map(|(v, w)| v * w).sum())
            .collect()
    }
}

/// Whether latent values at new locations are conditional draws (the
/// default; propagates GP uncertainty) or conditional means (a
/// variance-reduction mode).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    Draw,
    Mean,
}

fn sample_gp(model: &Model, sample: &PosteriorSample) -> Result<GpRealization> {
    let mut kernel = model.kernel;
    kernel.lengthscale = sample.lengthscale;
    GpRealization::from_parts(
        sample.points.clone(),
        sample.values.clone(),
        model.gp_mean,
        kernel,
    )
}

/// Latent values at locations: the override hooks win, otherwise one joint
/// conditional draw (or the conditional mean) from the sample's GP.
fn lambda_at(
    model: &Model,
    gp: &GpRealization,
    locations: &[Vec<f64>],
    mode: DrawMode,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<f64>> {
    if !model.lambda_mode.is_gp() {
        return Ok(locations
            .iter()
            .map(|loc| model.lambda_mode.value_at(loc).unwrap())
            .collect());
    }
    let law = gp.conditional_law(locations)?;
    Ok(match mode {
        DrawMode::Draw => law.draw(rng).iter().cloned().collect(),
        DrawMode::Mean => law.mean().iter().cloned().collect(),
    })
}

/// Evaluate one posterior sample's joint density surface on a 2-D grid.
///
/// Constrained models slice along the constrained axis: each slice gets one
/// joint lambda draw, a trapezoid normalizer over the unconstrained axis,
/// and the closed-form marginal out front. The unconstrained baseline
/// normalizes by one global quadrature instead.
pub fn eval_density_sample(
    model: &Model,
    sample: &PosteriorSample,
    grid: &EvalGrid,
    mode: DrawMode,
    rng: &mut ChaCha12Rng,
) -> Result<DensitySurface> {
    if grid.axes.len() != 2 {
        return Err(Error::Unsupported(
            "surface evaluation is implemented for two-dimensional grids".into(),
        ));
    }
    let gp = sample_gp(model, sample)?;
    let phi_eff = model.effective_phi(&sample.theta, sample.phi);
    let nodes0 = grid.axes[0].nodes();
    let nodes1 = grid.axes[1].nodes();
    let w1 = grid.axes[1].weights();
    let mut values = vec![vec![0.0; nodes1.len()]; nodes0.len()];
    let mut normalizers = Vec::with_capacity(nodes0.len());
    let mut flagged = Vec::new();

    match &model.constraint {
        Some(c) => {
            let phi = phi_eff
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("sample lost phi".into()))?;
            for (i, a) in nodes0.iter().enumerate() {
                let xa = [*a];
                let locs: Vec<Vec<f64>> =
                    nodes1.iter().map(|b| model.location(&xa, &[*b])).collect();
                let lam = lambda_at(model, &gp, &locs, mode, rng)?;
                let mut integrand = Vec::with_capacity(nodes1.len());
                for (b, l) in nodes1.iter().zip(&lam) {
                    let pi0 = model
                        .centering
                        .logpdf(&sample.theta, Some(phi), &xa, &[*b])?
                        .exp();
                    integrand.push(pi0 * sigmoid(*l));
                }
                let z: f64 = integrand.iter().zip(&w1).map(|(v, w)| v * w).sum();
                normalizers.push(z);
                if z < MIN_NORMALIZER {
                    flagged.push(i);
                    continue;
                }
                let pa = c.marginal_logpdf(phi, &xa)?.exp();
                for (j, v) in integrand.iter().enumerate() {
                    values[i][j] = pa * v / z;
                }
            }
        }
        None => {
            // Joint density proportional to pi0(x) sigma(lambda(x)).
            let w0 = grid.axes[0].weights();
            let mut integrand = vec![vec![0.0; nodes1.len()]; nodes0.len()];
            for (i, a) in nodes0.iter().enumerate() {
                let locs: Vec<Vec<f64>> =
                    nodes1.iter().map(|b| model.location(&[], &[*a, *b])).collect();
                let lam = lambda_at(model, &gp, &locs, mode, rng)?;
                for (j, (b, l)) in nodes1.iter().zip(&lam).enumerate() {
                    let pi0 = model
                        .centering
                        .logpdf(&sample.theta, None, &[], &[*a, *b])?
                        .exp();
                    integrand[i][j] = pi0 * sigmoid(*l);
                }
            }
            let mut z_total = 0.0;
            for (row, wi) in integrand.iter().zip(&w0) {
                let inner: f64 = row.iter().zip(&w1).map(|(v, wj)| v * wj).sum();
                z_total += wi * inner;
            }
            if z_total < MIN_NORMALIZER {
                return Err(Error::Numeric(
                    "global normalizer vanished on the evaluation grid".into(),
                ));
            }
            for i in 0..nodes0.len() {
                for j in 0..nodes1.len() {
                    values[i][j] = integrand[i][j] / z_total;
                }
                normalizers.push(z_total);
            }
        }
    }

    Ok(DensitySurface { grid: grid.clone(), values, normalizers, flagged_slices: flagged })
}

/// Pointwise average of per-sample surfaces; evaluations run concurrently
/// with one keyed stream per sample, reduced in sample order.
pub fn posterior_mean_density(
    model: &Model,
    samples: &[&PosteriorSample],
    grid: &EvalGrid,
    mode: DrawMode,
    key: &RngKey,
) -> Result<DensitySurface> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no posterior samples".into()));
    }
    let surfaces: Vec<Result<DensitySurface>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = key.child(domain::EVAL).child(i as u64).rng();
            eval_density_sample(model, s, grid, mode, &mut rng)
        })
        .collect();
    let mut iter = surfaces.into_iter();
    let mut acc = iter.next().unwrap()?;
    let mut count = 1.0;
    for s in iter {
        let s = s?;
        for (ra, rs) in acc.values.iter_mut().zip(&s.values) {
            for (va, vs) in ra.iter_mut().zip(rs) {
                *va += vs;
            }
        }
        for (na, ns) in acc.normalizers.iter_mut().zip(&s.normalizers) {
            *na += ns;
        }
        for f in s.flagged_slices {
            if !acc.flagged_slices.contains(&f) {
                acc.flagged_slices.push(f);
            }
        }
        count += 1.0;
    }
    for row in acc.values.iter_mut() {
        for v in row.iter_mut() {
            *v /= count;
        }
    }
    for n in acc.normalizers.iter_mut() {
        *n /= count;
    }
    acc.flagged_slices.sort_unstable();
    Ok(acc)
}

#[derive(Clone, Copy, Debug)]
pub struct HeldoutOptions {
    /// Use conditional means instead of draws for latent values.
    pub conditional_mean: bool,
    /// Evaluate the quadrature-heavy joint term on at most this many
    /// samples, evenly spaced through the trace (0 = all). The closed-form
    /// marginal of constrained models always uses every sample.
    pub max_samples: usize,
}

impl Default for HeldoutOptions {
    fn default() -> Self {
        HeldoutOptions { conditional_mean: false, max_samples: 0 }
    }
}

/// Held-out scores: averages over posterior samples of the per-sample log
/// probability (the headline numbers) plus the log of the mean probability,
/// and the per-sample series behind them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeldoutScores {
    pub joint_mean_log: f64,
    pub marginal_mean_log: f64,
    pub joint_log_mean: f64,
    pub marginal_log_mean: f64,
    pub per_sample_joint: Vec<f64>,
    pub per_sample_marginal: Vec<f64>,
    pub n_test: usize,
    pub joint_samples_used: usize,
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + (s / xs.len() as f64).ln()
}

fn thin_indices(n: usize, max: usize) -> Vec<usize> {
    if max == 0 || max >= n {
        (0..n).collect()
    } else {
        (0..max).map(|i| i * n / max).collect()
    }
}

/// Held-out joint and marginal log-likelihood of a test set under posterior
/// samples.
///
/// Constrained models: the marginal is the closed-form family log-density
/// at each sample's phi; the joint adds the centering, the sigmoid at a
/// conditionally drawn latent value, and the per-slice quadrature
/// normalizer. The unconstrained baseline computes both through quadrature
/// of the joint surface (global normalizer, per-test-slice numerators).
pub fn heldout_loglik(
    model: &Model,
    samples: &[&PosteriorSample],
    test: &ObsData,
    region: &EvalGrid,
    opts: HeldoutOptions,
    key: &RngKey,
) -> Result<HeldoutScores> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no posterior samples".into()));
    }
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let dim_a = model.dim_a();
    if region.axes.len() != dim_a + model.dim_ac {
        return Err(Error::InvalidParameter(
            "evaluation region must cover every coordinate".into(),
        ));
    }
    for (i, (xa, xac)) in test.xa.iter().zip(&test.xac).enumerate() {
        for (j, v) in xa.iter().chain(xac.iter()).enumerate() {
            if !region.axes[j].contains(*v) {
                return Err(Error::Data(format!(
                    "test row {} coordinate {} = {} outside the evaluation region",
                    i, j, v
                )));
            }
        }
    }
    let mode = if opts.conditional_mean { DrawMode::Mean } else { DrawMode::Draw };

    // Closed-form marginal per sample for constrained models.
    let per_sample_marginal_closed: Option<Vec<f64>> = match &model.constraint {
        Some(c) => {
            let mut v = Vec::with_capacity(samples.len());
            for s in samples {
                let phi = model
                    .effective_phi(&s.theta, s.phi)
                    .ok_or_else(|| Error::InvalidParameter("sample lost phi".into()))?;
                let mut ll = 0.0;
                for xa in &test.xa {
                    ll += c.marginal_logpdf(&phi, xa)?;
                }
                v.push(ll);
            }
            Some(v)
        }
        None => None,
    };

    let joint_idx = thin_indices(samples.len(), opts.max_samples);
    let eval_key = key.child(domain::EVAL);

    struct JointOut {
        joint: f64,
        marginal: Option<f64>,
    }

    let outs: Vec<Result<JointOut>> = joint_idx
        .par_iter()
        .map(|&si| {
            let s = samples[si];
            let mut rng = eval_key.child(si as u64).rng();
            let gp = sample_gp(model, s)?;
            let phi_eff = model.effective_phi(&s.theta, s.phi);
            match &model.constraint {
                Some(c) => {
                    let phi = phi_eff.as_ref().unwrap();
                    let ac_axis = &region.axes[dim_a];
                    let nodes = ac_axis.nodes();
                    let w = ac_axis.weights();
                    let mut joint = 0.0;
                    for (xa, xac) in test.xa.iter().zip(&test.xac) {
                        // One joint draw per slice: quadrature nodes plus the
                        // test point itself.
                        let mut locs: Vec<Vec<f64>> =
                            nodes.iter().map(|b| model.location(xa, &[*b])).collect();
                        locs.push(model.location(xa, xac));
                        let lam = lambda_at(model, &gp, &locs, mode, &mut rng)?;
                        let mut z = 0.0;
                        for ((b, l), wj) in nodes.iter().zip(&lam).zip(&w) {
                            let pi0 = model
                                .centering
                                .logpdf(&s.theta, Some(phi), xa, &[*b])?
                                .exp();
                            z += pi0 * sigmoid(*l) * wj;
                        }
                        if z < MIN_NORMALIZER {
                            return Err(Error::Numeric(
                                "slice normalizer vanished during held-out scoring".into(),
                            ));
                        }
                        let lam_test = lam[nodes.len()];
                        joint += c.marginal_logpdf(phi, xa)?
                            + model.centering.logpdf(&s.theta, Some(phi), xa, xac)?
                            + log_sigmoid(lam_test)
                            - z.ln();
                    }
                    Ok(JointOut { joint, marginal: None })
                }
                None => {
                    // Global normalizer over the grid, slice draws per column.
                    let nodes0 = region.axes[0].nodes();
                    let nodes1 = region.axes[1].nodes();
                    let w0 = region.axes[0].weights();
                    let w1 = region.axes[1].weights();
                    let mut z_total = 0.0;
                    for (a, wi) in nodes0.iter().zip(&w0) {
                        let locs: Vec<Vec<f64>> =
                            nodes1.iter().map(|b| model.location(&[], &[*a, *b])).collect();
                        let lam = lambda_at(model, &gp, &locs, mode, &mut rng)?;
                        let mut inner = 0.0;
                        for ((b, l), wj) in nodes1.iter().zip(&lam).zip(&w1) {
                            let pi0 = model
                                .centering
                                .logpdf(&s.theta, None, &[], &[*a, *b])?
                                .exp();
                            inner += pi0 * sigmoid(*l) * wj;
                        }
                        z_total += wi * inner;
                    }
                    if z_total < MIN_NORMALIZER {
                        return Err(Error::Numeric(
                            "global normalizer vanished during held-out scoring".into(),
                        ));
                    }
                    let ln_z = z_total.ln();
                    let mut joint = 0.0;
                    let mut marginal = 0.0;
                    for (xa, xac) in test.xa.iter().zip(&test.xac) {
                        debug_assert!(xa.is_empty());
                        let x = &xac[..];
                        // Slice through the test point's first coordinate,
                        // with the test point appended for its own lambda.
                        let mut locs: Vec<Vec<f64>> = nodes1
                            .iter()
                            .map(|b| model.location(&[], &[x[0], *b]))
                            .collect();
                        locs.push(model.location(&[], x));
                        let lam = lambda_at(model, &gp, &locs, mode, &mut rng)?;
                        let mut p_tilde = 0.0;
                        for ((b, l), wj) in nodes1.iter().zip(&lam).zip(&w1) {
                            let pi0 = model
                                .centering
                                .logpdf(&s.theta, None, &[], &[x[0], *b])?
                                .exp();
                            p_tilde += pi0 * sigmoid(*l) * wj;
                        }
                        if p_tilde < MIN_NORMALIZER {
                            return Err(Error::Numeric(
                                "marginal numerator vanished during held-out scoring".into(),
                            ));
                        }
                        marginal += p_tilde.ln() - ln_z;
                        let lam_test = lam[nodes1.len()];
                        joint += model.centering.logpdf(&s.theta, None, &[], x)?
                            + log_sigmoid(lam_test)
                            - ln_z;
                    }
                    Ok(JointOut { joint, marginal: Some(marginal) })
                }
            }
        })
        .collect();

    let mut per_sample_joint = Vec::with_capacity(joint_idx.len());
    let mut per_sample_marginal_grid = Vec::with_capacity(joint_idx.len());
    for o in outs {
        let o = o?;
        per_sample_joint.push(o.joint);
        if let Some(m) = o.marginal {
            per_sample_marginal_grid.push(m);
        }
    }
    let per_sample_marginal = match per_sample_marginal_closed {
        Some(v) => v,
        None => per_sample_marginal_grid,
    };

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(HeldoutScores {
        joint_mean_log: mean(&per_sample_joint),
        marginal_mean_log: mean(&per_sample_marginal),
        joint_log_mean: log_mean_exp(&per_sample_joint),
        marginal_log_mean: log_mean_exp(&per_sample_marginal),
        per_sample_joint,
        per_sample_marginal,
        n_test: test.len(),
        joint_samples_used: joint_idx.len(),
    })
}

/// The same machinery with the constraint removed: an unconstrained
/// nonparametric density over all coordinates, centered on a product of
/// independent normals with the same prior hyperparameters.
pub fn baseline_unconstrained_mode(model: &Model) -> Result<Model> {
    let mut baseline = model.clone();
    baseline.constraint = None;
    baseline.dim_ac = model.dim();
    baseline.centering = crate::centering::CenteringModel::new(
        crate::centering::CenteringVariant::Independent,
        model.centering.prior,
    )?;
    baseline.validate()?;
    Ok(baseline)
}

/// Maximum-likelihood bivariate normal on (log x_A, x_Ac): the parametric
/// baseline for lognormal-constrained bivariate data. Returns the held-out
/// (joint, marginal) log-likelihood, log-transform Jacobian included.
pub fn fit_parametric_baseline(train: &ObsData, test: &ObsData) -> Result<(f64, f64)> {
    if train.len() < 3 {
        return Err(Error::Data(format!(
            "parametric baseline needs at least 3 training rows, got {}",
            train.len()
        )));
    }
    let check = |d: &ObsData, name: &str| -> Result<()> {
        for (i, (xa, xac)) in d.xa.iter().zip(&d.xac).enumerate() {
            if xa.len() != 1 || xac.len() != 1 {
                return Err(Error::Unsupported("parametric baseline is bivariate".into()));
            }
            if xa[0] <= 0.0 {
                return Err(Error::Data(format!(
                    "{} row {}: constrained coordinate must be positive for the log transform",
                    name, i
                )));
            }
        }
        Ok(())
    };
    check(train, "train")?;
    check(test, "test")?;

    let n = train.len() as f64;
    let zs: Vec<(f64, f64)> = train
        .xa
        .iter()
        .zip(&train.xac)
        .map(|(xa, xac)| (xa[0].ln(), xac[0]))
        .collect();
    let m1 = zs.iter().map(|z| z.0).sum::<f64>() / n;
    let m2 = zs.iter().map(|z| z.1).sum::<f64>() / n;
    let mut s11 = 0.0;
    let mut s12 = 0.0;
    let mut s22 = 0.0;
    for (a, b) in &zs {
        s11 += (a - m1) * (a - m1) / n;
        s12 += (a - m1) * (b - m2) / n;
        s22 += (b - m2) * (b - m2) / n;
    }
    let det = s11 * s22 - s12 * s12;
    if det <= 1e-12 * s11.max(s22).max(1e-12) {
        return Err(Error::Numeric(
            "singular covariance in the parametric baseline fit".into(),
        ));
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut joint = 0.0;
    let mut marginal = 0.0;
    for (xa, xac) in test.xa.iter().zip(&test.xac) {
        let (z1, z2) = (xa[0].ln(), xac[0]);
        let (d1, d2) = (z1 - m1, z2 - m2);
        let quad = (s22 * d1 * d1 - 2.0 * s12 * d1 * d2 + s11 * d2 * d2) / det;
        joint += -ln_2pi - 0.5 * det.ln() - 0.5 * quad - z1; // -z1 is -ln x_A
        marginal += -0.5 * ln_2pi - 0.5 * s11.ln() - 0.5 * d1 * d1 / s11 - z1;
    }
    Ok((joint, marginal))
}

/// The density map from a latent surface: given lambda, the centering, and
/// the marginal on grid nodes, produce the joint surface with per-slice
/// trapezoid normalizers. Pure arithmetic; used by the perturbation-bound
/// property checks.
pub fn density_map_on_grid(
    p_a: &[f64],
    pi0: &[Vec<f64>],
    lambda: &[Vec<f64>],
    grid: &EvalGrid,
) -> Result<DensitySurface> {
    if grid.axes.len() != 2 || p_a.len() != grid.axes[0].n {
        return Err(Error::DimensionMismatch(
            "surface inputs do not match the grid".into(),
        ));
    }
    let w1 = grid.axes[1].weights();
    let mut values = vec![vec![0.0; grid.axes[1].n]; grid.axes[0].n];
    let mut normalizers = Vec::with_capacity(grid.axes[0].n);
    let mut flagged = Vec::new();
    for i in 0..grid.axes[0].n {
        let mut z = 0.0;
        for j in 0..grid.axes[1].n {
            z += pi0[i][j] * sigmoid(lambda[i][j]) * w1[j];
        }
        normalizers.push(z);
        if z < MIN_NORMALIZER {
            flagged.push(i);
            continue;
        }
        for j in 0..grid.axes[1].n {
            values[i][j] = p_a[i] * pi0[i][j] * sigmoid(lambda[i][j]) / z;
        }
    }
    Ok(DensitySurface { grid: grid.clone(), values, normalizers, flagged_slices: flagged })
}
