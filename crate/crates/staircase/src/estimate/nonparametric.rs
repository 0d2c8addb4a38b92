//! Pooled per-level proportion estimates.

use crate::model::Level;
use crate::sim::LevelCounts;

/// Proportion estimate at one level. `estimate` is `None` when the level was
/// never sampled; an unsampled level is inestimable, not zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelEstimate {
    pub level: Level,
    pub trials: u64,
    pub successes: u64,
    pub estimate: Option<f64>,
}

impl LevelEstimate {
    /// Binomial standard error `sqrt(p(1-p)/n)`; `None` when inestimable.
    pub fn standard_error(&self) -> Option<f64> {
        let p = self.estimate?;
        Some((p * (1.0 - p) / self.trials as f64).sqrt())
    }
}

/// Per-level success proportions from pooled counts.
pub fn fit_nonparametric(pooled: &LevelCounts) -> Vec<LevelEstimate> {
    (1..=pooled.levels())
        .map(|level| {
            let trials = pooled.trials[level - 1];
            let successes = pooled.correct[level - 1];
            let estimate = (trials > 0).then(|| successes as f64 / trials as f64);
            LevelEstimate { level, trials, successes, estimate }
        })
        .collect()
}
