//! Monte Carlo summary measures and empirical verification of the
//! small-sample bias identity: for a stochastic per-level total `T_s`, the
//! bias of the pooled proportion satisfies
//! `Bias(p_s) = -Cov(T_s, p_s) / E[T_s]`, and its weighted analogue holds
//! with posterior-weighted totals under the two-class model.
//!
//! Replications in which the level was never sampled contribute nothing to
//! either side (the integrand `m_s - pi_s T_s` vanishes there), so both sides
//! are computed over the replications with a positive total and the identity
//! still holds exactly.

use crate::error::{Error, Result};
use crate::estimate::{em_weight_components, LatentDataset, WeightMode};
use crate::model::Level;
use crate::rng::StreamKey;
use crate::sim::{simulate_dataset, ScenarioConfig, Scheme, SufficientCounts};

/// Bias/precision summary of one estimator across replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub abs_bias: f64,
    /// `abs_bias / truth`; undefined when the truth is zero.
    pub rel_bias: Option<f64>,
    /// Sample standard deviation of the estimates (n-1 divisor).
    pub se: f64,
    /// `sqrt(se^2 + abs_bias^2)`.
    pub rmse: f64,
    /// Number of estimates the summary is based on.
    pub effective: usize,
}

/// Summarize estimates against the truth.
pub fn summarize(estimates: &[f64], truth: f64) -> Result<SummaryStats> {
    if estimates.len() < 2 {
        return Err(Error::TooFewValues { need: 2, got: estimates.len() });
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let abs_bias = mean - truth;
    let rel_bias = (truth != 0.0).then(|| abs_bias / truth);
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = var.sqrt();
    let rmse = (se * se + abs_bias * abs_bias).sqrt();
    Ok(SummaryStats { abs_bias, rel_bias, se, rmse, effective: estimates.len() })
}

/// Both sides of the bias identity at one level, with a Monte Carlo standard
/// error for their difference.
#[derive(Debug, Clone, Copy)]
pub struct IdentityCheck {
    /// Empirical bias: mean estimate minus the true probability.
    pub lhs: f64,
    /// Minus the sample covariance of (total, estimate) over the mean total.
    pub rhs: f64,
    /// Jackknife standard error of `lhs - rhs`.
    pub mc_se: f64,
    /// Replications with a positive total at the level.
    pub effective: usize,
    /// Mean total at the level across effective replications.
    pub expected_trials: f64,
}

impl IdentityCheck {
    pub fn agrees(&self, z: f64) -> bool {
        (self.lhs - self.rhs).abs() < z * self.mc_se
    }
}

fn diff_from_sums(n: f64, sum_p: f64, sum_t: f64, sum_tp: f64, truth: f64) -> f64 {
    let mean_p = sum_p / n;
    let mean_t = sum_t / n;
    let cov = (sum_tp - sum_t * sum_p / n) / (n - 1.0);
    (mean_p - truth) + cov / mean_t
}

/// Assemble an [`IdentityCheck`] from per-replication (total, estimate)
/// pairs. The standard error of `lhs - rhs` comes from a leave-one-out
/// jackknife over replications.
fn identity_from_pairs(totals: &[f64], estimates: &[f64], truth: f64) -> IdentityCheck {
    let n = totals.len() as f64;
    let sum_p: f64 = estimates.iter().sum();
    let sum_t: f64 = totals.iter().sum();
    let sum_tp: f64 = totals.iter().zip(estimates).map(|(t, p)| t * p).sum();

    let mean_p = sum_p / n;
    let mean_t = sum_t / n;
    let cov = (sum_tp - sum_t * sum_p / n) / (n - 1.0);
    let lhs = mean_p - truth;
    let rhs = -cov / mean_t;

    let mut loo = Vec::with_capacity(totals.len());
    for (t, p) in totals.iter().zip(estimates) {
        loo.push(diff_from_sums(n - 1.0, sum_p - p, sum_t - t, sum_tp - t * p, truth));
    }
    let loo_mean = loo.iter().sum::<f64>() / n;
    let mc_se = ((n - 1.0) / n * loo.iter().map(|d| (d - loo_mean).powi(2)).sum::<f64>()).sqrt();

    IdentityCheck { lhs, rhs, mc_se, effective: totals.len(), expected_trials: mean_t }
}

/// Empirically check the bias identity for the pooled proportion at `level`
/// under a scheme without random effects, across `replications` Monte Carlo
/// replications. Validity of the Monte Carlo standard error wants
/// replications in the thousands.
pub fn bias_identity_check(
    config: &ScenarioConfig,
    level: Level,
    replications: usize,
) -> Result<IdentityCheck> {
    if config.scheme.has_random_effect() {
        return Err(Error::invalid("the unweighted identity applies to schemes without random effects"));
    }
    config.validate()?;
    if replications < 2 {
        return Err(Error::TooFewValues { need: 2, got: replications });
    }
    if level == 0 || level > config.grid.levels() {
        return Err(Error::invalid(format!("level {level} outside the grid")));
    }

    let truth = config.theta.prob(0.0, config.grid.value(level));
    let root = StreamKey::new(config.seed);
    let mut totals = Vec::new();
    let mut estimates = Vec::new();
    for r in 0..replications {
        let data = simulate_dataset(config, root.child(r as u64));
        let counts = SufficientCounts::from_dataset(&data, config.grid.levels());
        let t = counts.pooled.trials[level - 1];
        if t > 0 {
            totals.push(t as f64);
            estimates.push(counts.pooled.correct[level - 1] as f64 / t as f64);
        }
    }
    if totals.len() < 2 {
        return Err(Error::LevelUnsampled(level));
    }
    Ok(identity_from_pairs(&totals, &estimates, truth))
}

/// Weighted analogue under the fixed design with a latent effect: the
/// estimator is the oracle-weighted proportion for the elevated class, with
/// posterior weights computed at the true parameters.
pub fn weighted_bias_identity_check(
    config: &ScenarioConfig,
    level: Level,
    replications: usize,
) -> Result<IdentityCheck> {
    if config.scheme != Scheme::FdR {
        return Err(Error::invalid("the weighted identity check runs on the fixed design"));
    }
    let truth_params = config.latent_truth()?;
    config.validate()?;
    if replications < 2 {
        return Err(Error::TooFewValues { need: 2, got: replications });
    }
    if level == 0 || level > config.grid.levels() {
        return Err(Error::invalid(format!("level {level} outside the grid")));
    }

    let truth = truth_params.elevated[level - 1];
    let root = StreamKey::new(config.seed);
    let mut totals = Vec::new();
    let mut estimates = Vec::new();
    for r in 0..replications {
        let data = simulate_dataset(config, root.child(r as u64));
        let dataset = LatentDataset::from_subject_data(&data, config.grid.levels());
        let comps =
            em_weight_components(&dataset, &truth_params, WeightMode::ExactFixed, StreamKey::new(0))?;
        let mut weighted_total = 0.0;
        let mut weighted_correct = 0.0;
        for (w, c) in comps.weights.iter().zip(&dataset.counts) {
            weighted_total += w * c.trials[level - 1] as f64;
            weighted_correct += w * c.correct[level - 1] as f64;
        }
        if weighted_total > 0.0 {
            totals.push(weighted_total);
            estimates.push(weighted_correct / weighted_total);
        }
    }
    if totals.len() < 2 {
        return Err(Error::LevelUnsampled(level));
    }
    Ok(identity_from_pairs(&totals, &estimates, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EffectModel, IntensityGrid, Theta};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn summarize_two_point() {
        let s = summarize(&[1.1, 0.9], 1.0).unwrap();
        assert!(s.abs_bias.abs() < 1e-15);
        assert!((s.se - 0.14142135623730953).abs() < 1e-12);
        assert!((s.rmse - s.se).abs() < 1e-15);
        assert_eq!(s.rel_bias, Some(s.abs_bias));
    }

    #[test]
    fn summarize_exact_and_degenerate() {
        let s = summarize(&[2.0, 2.0, 2.0], 2.0).unwrap();
        assert_eq!(s.abs_bias, 0.0);
        assert_eq!(s.rel_bias, Some(0.0));
        assert_eq!(s.se, 0.0);
        assert_eq!(s.rmse, 0.0);

        let s = summarize(&[0.1, -0.1], 0.0).unwrap();
        assert_eq!(s.rel_bias, None);
        assert!(s.se > 0.0);

        assert!(summarize(&[1.0], 1.0).is_err());
    }

    #[test]
    fn rmse_identity_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..40);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let truth = rng.random_range(-2.0..2.0);
            let s = summarize(&xs, truth).unwrap();
            assert!((s.rmse * s.rmse - (s.se * s.se + s.abs_bias * s.abs_bias)).abs() < 1e-10);
            assert!(s.rmse >= s.abs_bias.abs() - 1e-15);
        }
    }

    fn ud_config(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            scheme: Scheme::Ud,
            effect: EffectModel::None,
            subjects: 10,
            trials: 15,
            grid: IntensityGrid::new(0.2, 10).unwrap(),
            theta: Theta::new(0.05, 9.0),
            replications: 1,
            seed,
        }
    }

    #[test]
    fn fd_identity_is_near_zero() {
        let mut cfg = ud_config(400);
        cfg.scheme = Scheme::Fd;
        let check = bias_identity_check(&cfg, 5, 2_000).unwrap();
        assert!(check.agrees(3.0), "lhs {} rhs {} se {}", check.lhs, check.rhs, check.mc_se);
        assert!(check.lhs.abs() < 3.0 * check.mc_se + 5e-3);
        assert!(check.rhs.abs() < 3.0 * check.mc_se + 5e-3);
    }

    #[test]
    fn ud_identity_sides_agree() {
        let check = bias_identity_check(&ud_config(401), 2, 4_000).unwrap();
        assert!(check.agrees(3.5), "lhs {} rhs {} se {}", check.lhs, check.rhs, check.mc_se);
        assert!(check.effective > 3_500);
    }

    #[test]
    fn identity_check_validation() {
        let mut cfg = ud_config(402);
        assert!(bias_identity_check(&cfg, 11, 100).is_err());
        assert!(bias_identity_check(&cfg, 1, 1).is_err());
        cfg.scheme = Scheme::UdR;
        cfg.effect = EffectModel::Gaussian { sd: 1.0 };
        assert!(bias_identity_check(&cfg, 1, 100).is_err());
    }

    #[test]
    fn weighted_identity_requires_latent_fixed_design() {
        let cfg = ud_config(403);
        assert!(weighted_bias_identity_check(&cfg, 1, 100).is_err());
        let latent = ScenarioConfig {
            scheme: Scheme::FdR,
            effect: EffectModel::Latent { prevalence: 0.4, offset: 2.0 },
            subjects: 8,
            trials: 8,
            grid: IntensityGrid::new(0.2, 10).unwrap(),
            theta: Theta::new(0.05, 9.0),
            replications: 1,
            seed: 404,
        };
        let check = weighted_bias_identity_check(&latent, 3, 2_000).unwrap();
        assert!(check.agrees(3.5), "lhs {} rhs {} se {}", check.lhs, check.rhs, check.mc_se);
    }
}
