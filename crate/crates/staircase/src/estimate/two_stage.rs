//! Two-stage estimation: fit each subject separately, report the mean of the
//! per-subject estimates.

use super::{group_by_subject, logistic::fit_logistic, FitResult};
use crate::error::{Error, Result};
use crate::sim::SubjectData;

/// Mean of per-subject estimates over converged fits.
#[derive(Debug, Clone)]
pub struct TwoStageFit {
    pub fit: FitResult,
    /// Subjects whose individual fits converged and entered the mean.
    pub used: usize,
    /// Subjects excluded because their individual fit failed or diverged.
    pub excluded: usize,
}

/// Average converged per-subject fits parameter by parameter. The reported
/// standard errors are the standard errors of the mean.
pub fn two_stage_mean(fits: &[FitResult]) -> Result<TwoStageFit> {
    let converged: Vec<&FitResult> = fits.iter().filter(|f| f.converged).collect();
    if converged.is_empty() {
        return Err(Error::TooFewValues { need: 1, got: 0 });
    }
    let names: Vec<String> = converged[0].params().to_vec();
    let n = converged.len() as f64;
    let mut means = Vec::with_capacity(names.len());
    let mut ses = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let values: Vec<f64> = converged
            .iter()
            .map(|f| {
                debug_assert_eq!(f.params()[k], *name);
                f.estimate_values()[k]
            })
            .collect();
        let mean = values.iter().sum::<f64>() / n;
        means.push(mean);
        if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            ses.push((var / n).sqrt());
        } else {
            ses.push(f64::NAN);
        }
    }
    let mut fit = FitResult::new(names, means, ses);
    fit.loglik = f64::NAN;
    fit.converged = true;
    fit.iterations = 0;
    Ok(TwoStageFit { fit, used: converged.len(), excluded: fits.len() - converged.len() })
}

/// Per-subject logistic fits followed by the mean. Subjects whose fit errors
/// (separation, rank deficiency) or diverges are excluded and counted.
pub fn fit_two_stage_logistic(data: &[SubjectData]) -> Result<TwoStageFit> {
    let mut fits = Vec::new();
    let mut errored = 0usize;
    for obs in group_by_subject(data) {
        match fit_logistic(&obs) {
            Ok(fit) => fits.push(fit),
            Err(_) => errored += 1,
        }
    }
    let mut out = two_stage_mean(&fits)?;
    out.excluded += errored;
    Ok(out)
}
