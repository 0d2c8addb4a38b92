//! Estimation procedures: pooled proportions, logistic maximum likelihood,
//! marginal likelihood with a Gaussian random intercept, the two-class EM,
//! and the per-subject two-stage mean.

pub mod latent_class;
pub mod logistic;
pub mod nonparametric;
pub mod random_intercept;
pub mod two_stage;

pub use latent_class::{
    conditional_loglik, em_m_step, em_tau_update, em_weight_components, em_weights,
    fit_latent_class, latent_class_score, observed_loglik, EmFit, EmOptions, LatentDataset,
    TauUpdate, WeightMode,
};
pub use logistic::{fit_logistic, logistic_loglik, logistic_score};
pub use nonparametric::{fit_nonparametric, LevelEstimate};
pub use random_intercept::{fit_random_intercept, subject_log_marginal, RandomInterceptOptions};
pub use two_stage::two_stage_mean;

use crate::sim::SubjectData;

/// Clamp applied inside logs and weight formulas.
pub const LOG_EPS: f64 = 1e-12;

pub(crate) fn clamp_unit(p: f64) -> f64 {
    p.clamp(LOG_EPS, 1.0 - LOG_EPS)
}

/// Binomial observations grouped by a distinct intensity value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialObs {
    pub intensity: f64,
    pub trials: f64,
    pub successes: f64,
}

/// Pool all trials over subjects by distinct intensity.
pub fn group_pooled(data: &[SubjectData]) -> Vec<BinomialObs> {
    let mut all: Vec<(f64, u8)> = data
        .iter()
        .flat_map(|s| s.records.iter().map(|r| (r.intensity, r.response)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<BinomialObs> = Vec::new();
    for (intensity, response) in all {
        match out.last_mut() {
            Some(obs) if obs.intensity == intensity => {
                obs.trials += 1.0;
                obs.successes += response as f64;
            }
            _ => out.push(BinomialObs { intensity, trials: 1.0, successes: response as f64 }),
        }
    }
    out
}

/// Group each subject's trials by distinct intensity.
pub fn group_by_subject(data: &[SubjectData]) -> Vec<Vec<BinomialObs>> {
    data.iter()
        .map(|s| group_pooled(std::slice::from_ref(s)))
        .collect()
}

/// Outcome of a model fit: named estimates, standard errors from the inverse
/// observed information (NaN where undefined), the maximized log-likelihood,
/// and convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct FitResult {
    params: Vec<String>,
    estimates: Vec<f64>,
    standard_errors: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// A variance parameter was driven to its boundary; the fit is valid.
    pub boundary: bool,
    /// The slope diverged, the signature of (quasi-)complete separation.
    pub diverging_slope: bool,
    /// Covariance of the estimates (row-major, aligned with `params`).
    pub vcov: Option<Vec<f64>>,
}

impl FitResult {
    pub fn new(params: Vec<String>, estimates: Vec<f64>, standard_errors: Vec<f64>) -> Self {
        assert_eq!(params.len(), estimates.len());
        assert_eq!(params.len(), standard_errors.len());
        Self {
            params,
            estimates,
            standard_errors,
            loglik: f64::NAN,
            converged: false,
            iterations: 0,
            boundary: false,
            diverging_slope: false,
            vcov: None,
        }
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn estimates(&self) -> impl Iterator<Item = (&str, f64)> {
        self.params.iter().map(|s| s.as_str()).zip(self.estimates.iter().copied())
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.estimates[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.standard_errors[i])
    }

    pub fn estimate_values(&self) -> &[f64] {
        &self.estimates
    }

    pub fn se_values(&self) -> &[f64] {
        &self.standard_errors
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p == name)
    }

    /// Covariance entry by parameter names.
    pub fn cov(&self, p: &str, q: &str) -> Option<f64> {
        let v = self.vcov.as_ref()?;
        let n = self.params.len();
        Some(v[self.index(p)? * n + self.index(q)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EffectModel, IntensityGrid, SubjectEffect, Theta};
    use crate::rng::StreamKey;
    use crate::sim::{simulate_dataset, ScenarioConfig, Scheme};

    #[test]
    fn grouping_pools_by_distinct_intensity() {
        let cfg = ScenarioConfig {
            scheme: Scheme::Fd,
            effect: EffectModel::None,
            subjects: 4,
            trials: 25,
            grid: IntensityGrid::new(0.2, 10).unwrap(),
            theta: Theta::new(0.05, 9.0),
            replications: 1,
            seed: 1,
        };
        let data = simulate_dataset(&cfg, StreamKey::new(1));
        let pooled = group_pooled(&data);
        let total: f64 = pooled.iter().map(|o| o.trials).sum();
        assert_eq!(total, 100.0);
        assert!(pooled.windows(2).all(|w| w[0].intensity < w[1].intensity));
        let per_subject = group_by_subject(&data);
        assert_eq!(per_subject.len(), 4);
        for obs in per_subject.iter().flatten() {
            assert!(obs.successes <= obs.trials);
        }
        let _ = SubjectEffect::none();
    }
}
