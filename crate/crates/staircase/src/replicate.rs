//! Replicated Monte Carlo runs of a scenario: simulate, fit, tabulate.
//!
//! Replication `r` draws everything from the child stream `r` of the
//! scenario seed, so tables are identical for any thread count and any
//! execution order.

use crate::error::Result;
use crate::estimate::{
    fit_latent_class, fit_logistic, fit_nonparametric, fit_random_intercept, group_by_subject,
    group_pooled, two_stage::fit_two_stage_logistic, EmOptions, FitResult, LatentDataset,
    RandomInterceptOptions, WeightMode,
};
use crate::model::Theta;
use crate::rng::StreamKey;
use crate::sim::{simulate_dataset, ScenarioConfig, Scheme, SufficientCounts};
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;

/// Which estimation procedure to run on each replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    Nonparametric,
    Logistic,
    RandomIntercept,
    LatentClassEm { weight_mode: WeightMode },
    TwoStage,
}

impl EstimatorKind {
    /// The group-level estimator conventionally paired with a scheme:
    /// plain logistic ML without a random effect, marginal ML with one.
    pub fn default_for(scheme: Scheme) -> Self {
        if scheme.has_random_effect() {
            EstimatorKind::RandomIntercept
        } else {
            EstimatorKind::Logistic
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Nonparametric => "nonparametric",
            EstimatorKind::Logistic => "logistic",
            EstimatorKind::RandomIntercept => "random-intercept",
            EstimatorKind::LatentClassEm { .. } => "latent-em",
            EstimatorKind::TwoStage => "two-stage",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonparametric" => Ok(EstimatorKind::Nonparametric),
            "logistic" => Ok(EstimatorKind::Logistic),
            "random-intercept" => Ok(EstimatorKind::RandomIntercept),
            "latent-em" => Ok(EstimatorKind::LatentClassEm { weight_mode: WeightMode::ExactFixed }),
            "two-stage" => Ok(EstimatorKind::TwoStage),
            other => Err(crate::error::Error::invalid(format!(
                "unknown estimator `{other}` (expected nonparametric, logistic, random-intercept, latent-em or two-stage)"
            ))),
        }
    }
}

/// One estimate produced by one estimator in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub replication: usize,
    pub estimator: &'static str,
    pub param: String,
    pub estimate: f64,
    pub se: f64,
    pub converged: bool,
    pub loglik: f64,
    pub iterations: usize,
}

/// All rows of a replicated run, ordered by (replication, estimator, param).
#[derive(Debug, Clone, Default)]
pub struct EstimateTable {
    pub rows: Vec<EstimateRow>,
    /// Replications in which an estimator failed outright (error, not just a
    /// non-converged fit), per estimator name.
    pub failures: Vec<(usize, &'static str, String)>,
}

impl EstimateTable {
    /// Estimates of `param` by `estimator` from converged replications.
    pub fn converged_estimates(&self, estimator: &str, param: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator && r.param == param && r.converged)
            .map(|r| r.estimate)
            .collect()
    }

    pub fn replications_run(&self) -> usize {
        self.rows.iter().map(|r| r.replication + 1).max().unwrap_or(0)
    }
}

/// Derived 50%-point rows are appended for fits that estimate a slope.
fn push_fit_rows(rows: &mut Vec<EstimateRow>, replication: usize, name: &'static str, fit: &FitResult) {
    for ((param, estimate), &se) in fit.estimates().zip(fit.se_values()) {
        rows.push(EstimateRow {
            replication,
            estimator: name,
            param: param.to_string(),
            estimate,
            se,
            converged: fit.converged,
            loglik: fit.loglik,
            iterations: fit.iterations,
        });
    }
    if let (Some(a), Some(b)) = (fit.estimate("intercept"), fit.estimate("slope")) {
        let theta = Theta::new(a, b);
        if let Ok(ed50) = theta.ed50() {
            // Delta-method standard error from the (a, b) covariance.
            let se = match (fit.cov("intercept", "intercept"), fit.cov("slope", "slope"), fit.cov("intercept", "slope")) {
                (Some(vaa), Some(vbb), Some(vab)) => {
                    let da = -1.0 / b;
                    let db = a / (b * b);
                    let v = da * da * vaa + 2.0 * da * db * vab + db * db * vbb;
                    if v > 0.0 { v.sqrt() } else { f64::NAN }
                }
                _ => f64::NAN,
            };
            rows.push(EstimateRow {
                replication,
                estimator: name,
                param: "ed50".into(),
                estimate: ed50,
                se,
                converged: fit.converged,
                loglik: fit.loglik,
                iterations: fit.iterations,
            });
        }
    }
}

fn run_one(
    config: &ScenarioConfig,
    estimators: &[EstimatorKind],
    replication: usize,
) -> (Vec<EstimateRow>, Vec<(usize, &'static str, String)>) {
    let key = StreamKey::new(config.seed).child(replication as u64);
    let data = simulate_dataset(config, key);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &estimator in estimators {
        let name = estimator.name();
        let result: Result<()> = (|| {
            match estimator {
                EstimatorKind::Nonparametric => {
                    let counts = SufficientCounts::from_dataset(&data, config.grid.levels());
                    for est in fit_nonparametric(&counts.pooled) {
                        rows.push(EstimateRow {
                            replication,
                            estimator: name,
                            param: format!("prob_{}", est.level),
                            estimate: est.estimate.unwrap_or(f64::NAN),
                            se: est.standard_error().unwrap_or(f64::NAN),
                            converged: est.estimate.is_some(),
                            loglik: f64::NAN,
                            iterations: 0,
                        });
                    }
                }
                EstimatorKind::Logistic => {
                    let fit = fit_logistic(&group_pooled(&data))?;
                    push_fit_rows(&mut rows, replication, name, &fit);
                }
                EstimatorKind::RandomIntercept => {
                    let fit = fit_random_intercept(
                        &group_by_subject(&data),
                        &RandomInterceptOptions::default(),
                    )?;
                    push_fit_rows(&mut rows, replication, name, &fit);
                }
                EstimatorKind::LatentClassEm { weight_mode } => {
                    let dataset = LatentDataset::from_subject_data(&data, config.grid.levels());
                    let opts = EmOptions {
                        weight_mode,
                        key: key.child(u64::MAX),
                        standard_errors: false,
                        ..Default::default()
                    };
                    let fit = fit_latent_class(&dataset, &opts)?;
                    push_fit_rows(&mut rows, replication, name, &fit.to_fit_result());
                }
                EstimatorKind::TwoStage => {
                    let out = fit_two_stage_logistic(&data)?;
                    push_fit_rows(&mut rows, replication, name, &out.fit);
                }
            }
            Ok(())
        })();
        if let Err(err) = result {
            failures.push((replication, name, err.to_string()));
        }
    }
    (rows, failures)
}

/// Run `config.replications` independent replications, fitting every listed
/// estimator on each. Individual failures are recorded, never fatal.
pub fn run_replications(config: &ScenarioConfig, estimators: &[EstimatorKind]) -> EstimateTable {
    let results: Vec<_> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_one(config, estimators, r))
        .collect();
    let mut table = EstimateTable::default();
    for (rows, failures) in results {
        table.rows.extend(rows);
        table.failures.extend(failures);
    }
    table
}
