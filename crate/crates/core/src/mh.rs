//! Componentwise random-walk Metropolis bookkeeping.

use serde::{Deserialize, Serialize};

/// Per-component proposal scales with Robbins-Monro adaptation toward a
/// target acceptance rate. Adaptation is only applied while the caller says
/// so (burn-in); afterwards the scales are frozen, which preserves the
/// chain's exactness.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RwStep {
    log_sizes: Vec<f64>,
    counts: Vec<u64>,
    target_accept: f64,
}

impl RwStep {
    pub fn new(components: usize, initial_size: f64) -> Self {
        RwStep {
            log_sizes: vec![initial_size.ln(); components],
            counts: vec![0; components],
            target_accept: 0.44,
        }
    }

    pub fn len(&self) -> usize {
        self.log_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_sizes.is_empty()
    }

    pub fn size(&self, component: usize) -> f64 {
        self.log_sizes[component].exp()
    }

    /// Record an accept/reject outcome; move the scale only when adapting.
    pub fn record(&mut self, component: usize, accepted: bool, adapt: bool) {
        if !adapt {
            return;
        }
        self.counts[component] += 1;
        let t = self.counts[component] as f64;
        let gamma = (t + 10.0).powf(-0.6);
        let err = if accepted { 1.0 } else { 0.0 } - self.target_accept;
        self.log_sizes[component] += gamma * err;
        // Keep scales in a sane band; runaway adaptation signals a broken
        // target, not a tuning opportunity.
        self.log_sizes[component] = self.log_sizes[component].clamp(-20.0, 20.0);
    }
}

/// One symmetric random-walk Metropolis decision on a transformed coordinate.
/// `log_target` already includes any Jacobian terms. Returns the accepted
/// coordinate and whether the proposal was taken.
pub fn mh_step<R: rand::Rng>(
    current: f64,
    current_log_target: f64,
    proposal_sd: f64,
    log_target: impl Fn(f64) -> f64,
    rng: &mut R,
) -> (f64, f64, bool) {
    use rand_distr::StandardNormal;
    let z: f64 = rng.sample(StandardNormal);
    let cand = current + proposal_sd * z;
    let cand_lt = log_target(cand);
    let u: f64 = rng.gen::<f64>();
    if cand_lt.is_finite() && u.ln() < cand_lt - current_log_target {
        (cand, cand_lt, true)
    } else {
        (current, current_log_target, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn rw_metropolis_targets_standard_normal() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut x = 0.0;
        let mut lt = 0.0;
        let target = |v: f64| -0.5 * v * v;
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let (nx, nlt, _) = mh_step(x, lt, 2.4, target, &mut rng);
            x = nx;
            lt = nlt;
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {}", mean);
        assert!((var - 1.0).abs() < 0.03, "var {}", var);
    }

    #[test]
    fn adaptation_freezes_when_disabled() {
        let mut step = RwStep::new(1, 0.5);
        let before = step.size(0);
        for _ in 0..100 {
            step.record(0, true, false);
        }
        assert_eq!(step.size(0), before);
        for _ in 0..100 {
            step.record(0, true, true);
        }
        assert!(step.size(0) > before);
    }
}
