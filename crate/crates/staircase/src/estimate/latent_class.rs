//! Two-class latent mixture estimated by EM.
//!
//! Each subject belongs to one of two classes whose per-level success
//! probabilities differ by a fixed logit offset in the generating model but
//! are estimated freely here. The E-step computes posterior class weights,
//! the M-step re-estimates the per-level probabilities as weighted
//! proportions, and the class prevalence is updated from the weights.
//!
//! Posterior weights need the ratio of the intensity-path densities given
//! each class. Under a fixed design the paths carry no class information and
//! the ratio drops ([`WeightMode::ExactFixed`]). Under an up-down design the
//! ratio can be estimated from forward simulations of the walk under each
//! class ([`WeightMode::UpDownSimulated`]). [`WeightMode::Naive`] applies the
//! fixed-design formula regardless of the design that generated the data.

use super::{clamp_unit, FitResult, LOG_EPS};
use crate::design::updown_next;
use crate::error::{Error, Result};
use crate::model::{LatentClassParams, Level};
use crate::numeric::{central_hessian, invert_symmetric, logsumexp};
use crate::rng::StreamKey;
use crate::sim::{LevelCounts, SubjectData};
use rand::Rng;

/// Per-subject data the mixture estimators consume: level counts for the
/// likelihood and the intensity path for design-density estimation.
#[derive(Debug, Clone)]
pub struct LatentDataset {
    levels: usize,
    pub counts: Vec<LevelCounts>,
    pub level_seqs: Vec<Vec<Level>>,
}

impl LatentDataset {
    pub fn from_subject_data(data: &[SubjectData], levels: usize) -> Self {
        let mut counts = Vec::with_capacity(data.len());
        let mut level_seqs = Vec::with_capacity(data.len());
        for subject in data {
            let mut c = LevelCounts::new(levels);
            for r in &subject.records {
                c.add(r.level, r.response);
            }
            counts.push(c);
            level_seqs.push(subject.level_sequence());
        }
        Self { levels, counts, level_seqs }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn subjects(&self) -> usize {
        self.counts.len()
    }
}

/// Class-conditional response log-likelihood of one subject:
/// `sum_s m_s log p_s + (T_s - m_s) log(1 - p_s)`.
pub fn conditional_loglik(probs: &[f64], counts: &LevelCounts) -> f64 {
    let mut ll = 0.0;
    for s in 0..counts.levels() {
        let t = counts.trials[s] as f64;
        if t == 0.0 {
            continue;
        }
        let m = counts.correct[s] as f64;
        let p = clamp_unit(probs[s]);
        ll += m * p.ln() + (t - m) * (1.0 - p).ln();
    }
    ll
}

/// Observed-data log-likelihood of the two-class mixture.
pub fn observed_loglik(params: &LatentClassParams, counts: &[LevelCounts]) -> f64 {
    let tau = clamp_unit(params.prevalence);
    counts
        .iter()
        .map(|c| {
            let l0 = conditional_loglik(&params.baseline, c);
            let la = conditional_loglik(&params.elevated, c);
            logsumexp(&[(1.0 - tau).ln() + l0, tau.ln() + la])
        })
        .sum()
}

/// How the posterior class weights treat the intensity-path density ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// Drop the ratio; exact under a fixed design.
    ExactFixed,
    /// Estimate the ratio from `paths` forward up-down walks per class,
    /// sharing the random numbers across classes.
    UpDownSimulated { paths: usize },
    /// Drop the ratio regardless of the design. Misspecified in the sense
    /// that it ignores how an adaptive design was generated.
    Naive,
}

/// Everything the E-step produces for one parameter value.
#[derive(Debug, Clone)]
pub struct WeightComponents {
    /// Posterior probability of the elevated class per subject.
    pub weights: Vec<f64>,
    pub loglik_baseline: Vec<f64>,
    pub loglik_elevated: Vec<f64>,
    /// `log f(path | baseline) - log f(path | elevated)` per subject;
    /// zero when the mode drops the ratio.
    pub log_design_ratio: Vec<f64>,
}

fn weight_from_parts(tau: f64, log_contrast: f64) -> f64 {
    // w = 1 / (1 + ((1-tau)/tau) exp(log_contrast)), computed stably.
    let t = ((1.0 - tau) / tau).ln() + log_contrast;
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// Posterior class weights and their components at the given parameters.
pub fn em_weight_components(
    data: &LatentDataset,
    params: &LatentClassParams,
    mode: WeightMode,
    key: StreamKey,
) -> Result<WeightComponents> {
    let tau = clamp_unit(params.prevalence);
    let n = data.subjects();
    let mut comps = WeightComponents {
        weights: Vec::with_capacity(n),
        loglik_baseline: Vec::with_capacity(n),
        loglik_elevated: Vec::with_capacity(n),
        log_design_ratio: vec![0.0; n],
    };
    if let WeightMode::UpDownSimulated { paths } = mode {
        if paths == 0 {
            return Err(Error::invalid("path count for the simulated design ratio must be positive"));
        }
        for (i, seq) in data.level_seqs.iter().enumerate() {
            comps.log_design_ratio[i] =
                simulated_log_design_ratio(seq, params, paths, data.levels, key.child(i as u64))?;
        }
    }
    for (i, c) in data.counts.iter().enumerate() {
        let l0 = conditional_loglik(&params.baseline, c);
        let la = conditional_loglik(&params.elevated, c);
        comps.loglik_baseline.push(l0);
        comps.loglik_elevated.push(la);
        comps.weights.push(weight_from_parts(tau, l0 - la + comps.log_design_ratio[i]));
    }
    Ok(comps)
}

/// Posterior class weights only.
pub fn em_weights(
    data: &LatentDataset,
    params: &LatentClassParams,
    mode: WeightMode,
    key: StreamKey,
) -> Result<Vec<f64>> {
    Ok(em_weight_components(data, params, mode, key)?.weights)
}

/// The response implied by an up-down transition, or an error when the pair
/// is not reachable in one step.
fn implied_response(from: Level, to: Level, levels: usize) -> Result<bool> {
    for correct in [true, false] {
        if updown_next(from, correct, levels) == to {
            return Ok(correct);
        }
    }
    Err(Error::invalid(format!(
        "levels {from} -> {to} are not consecutive states of an up-down walk"
    )))
}

/// Estimate `log f(path | baseline) - log f(path | elevated)` for one subject
/// by tallying transition frequencies from simulated walks under each class.
///
/// Both classes reuse the same uniforms path by path, and the per-fit key is
/// reused across E-steps, so the estimate is a deterministic function of the
/// parameters. Transition probabilities use add-half smoothing so levels the
/// simulation never visited stay finite.
fn simulated_log_design_ratio(
    seq: &[Level],
    params: &LatentClassParams,
    paths: usize,
    levels: usize,
    key: StreamKey,
) -> Result<f64> {
    if seq.len() < 2 {
        return Ok(0.0);
    }
    let start = seq[0];
    let steps = seq.len() - 1;
    // visits[class][level-1], downs[class][level-1]
    let mut visits = [vec![0u64; levels], vec![0u64; levels]];
    let mut downs = [vec![0u64; levels], vec![0u64; levels]];
    for path in 0..paths {
        let mut rng = key.child(path as u64).rng();
        let mut s = [start, start];
        for _ in 0..steps {
            let u: f64 = rng.random();
            for (class, probs) in [&params.baseline, &params.elevated].into_iter().enumerate() {
                let level = s[class];
                let correct = u < probs[level - 1];
                visits[class][level - 1] += 1;
                downs[class][level - 1] += correct as u64;
                s[class] = updown_next(level, correct, levels);
            }
        }
    }

    let mut log_ratio = 0.0;
    for w in seq.windows(2) {
        let correct = implied_response(w[0], w[1], levels)?;
        for (class, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let v = visits[class][w[0] - 1] as f64;
            let d = downs[class][w[0] - 1] as f64;
            let p_down = (d + 0.5) / (v + 1.0);
            let p = if correct { p_down } else { 1.0 - p_down };
            log_ratio += sign * clamp_unit(p).ln();
        }
    }
    Ok(log_ratio)
}

/// Closed-form weighted-proportion M-step. Levels whose weighted denominator
/// vanishes are held at their previous value and flagged.
pub fn em_m_step(
    weights: &[f64],
    counts: &[LevelCounts],
    previous: &LatentClassParams,
) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let levels = previous.levels();
    let mut baseline = Vec::with_capacity(levels);
    let mut elevated = Vec::with_capacity(levels);
    let mut held = vec![false; 2 * levels];
    for s in 0..levels {
        let mut num0 = 0.0;
        let mut den0 = 0.0;
        let mut num_a = 0.0;
        let mut den_a = 0.0;
        for (w, c) in weights.iter().zip(counts) {
            let t = c.trials[s] as f64;
            let m = c.correct[s] as f64;
            num0 += (1.0 - w) * m;
            den0 += (1.0 - w) * t;
            num_a += w * m;
            den_a += w * t;
        }
        if den0 > 0.0 {
            baseline.push(clamp_unit(num0 / den0));
        } else {
            baseline.push(previous.baseline[s]);
            held[s] = true;
        }
        if den_a > 0.0 {
            elevated.push(clamp_unit(num_a / den_a));
        } else {
            elevated.push(previous.elevated[s]);
            held[levels + s] = true;
        }
    }
    (baseline, elevated, held)
}

/// Prevalence update by inverting the weight formula: `tau = 1/(1 + chi)`
/// where `chi` is the ratio of the summed weight odds to the summed
/// likelihood contrasts. Strictly inside (0, 1) by construction.
pub fn em_tau_update(
    weights: &[f64],
    loglik_baseline: &[f64],
    loglik_elevated: &[f64],
    log_design_ratio: &[f64],
) -> f64 {
    let log_num = logsumexp(
        &weights
            .iter()
            .map(|&w| {
                let w = w.clamp(LOG_EPS, 1.0 - LOG_EPS);
                ((1.0 - w) / w).ln()
            })
            .collect::<Vec<_>>(),
    );
    let contrasts: Vec<f64> = loglik_baseline
        .iter()
        .zip(loglik_elevated)
        .zip(log_design_ratio)
        .map(|((l0, la), r)| l0 - la + r)
        .collect();
    let log_chi = log_num - logsumexp(&contrasts);
    // tau = 1/(1 + exp(log_chi))
    weight_from_parts(0.5, log_chi)
}

/// Prevalence update rule used inside the EM loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauUpdate {
    /// Mean of the posterior weights: the exact maximizer of the EM bound.
    /// Keeps the observed log-likelihood monotone and makes fixed points
    /// stationary points of the likelihood.
    #[default]
    PosteriorMean,
    /// The inversion heuristic of [`em_tau_update`], evaluated with the
    /// likelihood contrasts at the updated probabilities. Not an EM bound
    /// maximizer: iterates may decrease the observed log-likelihood and the
    /// prevalence at a fixed point need not satisfy its score equation.
    HeuristicInversion,
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub weight_mode: WeightMode,
    pub tau_update: TauUpdate,
    /// Max-norm parameter change below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting point; pooled proportions split by -+0.05 when absent.
    pub init: Option<LatentClassParams>,
    /// Stream key for the simulated design ratio.
    pub key: StreamKey,
    /// Compute standard errors from the numerically differentiated observed
    /// information.
    pub standard_errors: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            weight_mode: WeightMode::ExactFixed,
            tau_update: TauUpdate::PosteriorMean,
            tol: 1e-8,
            max_iter: 10_000,
            init: None,
            key: StreamKey::new(0),
            standard_errors: true,
        }
    }
}

/// A converged (or best-effort) EM fit.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: LatentClassParams,
    /// Observed-data log-likelihood after each iteration, starting at the
    /// initial parameters.
    pub loglik_trace: Vec<f64>,
    /// Final posterior class weights.
    pub weights: Vec<f64>,
    /// Levels held at their previous value in the last M-step
    /// (baseline levels first, then elevated).
    pub held: Vec<bool>,
    pub converged: bool,
    pub iterations: usize,
    /// Some probability hit the clamp boundary; score equations need not
    /// vanish there.
    pub boundary: bool,
    pub standard_errors: Option<Vec<f64>>,
}

impl EmFit {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap()
    }

    /// Plug-in marginal success probability at `level`.
    pub fn marginal(&self, level: Level) -> f64 {
        self.params.marginal(level)
    }

    /// Flatten into the common fit-result shape with parameters named
    /// `baseline_1.., elevated_1.., prevalence`.
    pub fn to_fit_result(&self) -> FitResult {
        let levels = self.params.levels();
        let mut names = Vec::with_capacity(2 * levels + 1);
        let mut estimates = Vec::with_capacity(2 * levels + 1);
        for s in 1..=levels {
            names.push(format!("baseline_{s}"));
            estimates.push(self.params.baseline[s - 1]);
        }
        for s in 1..=levels {
            names.push(format!("elevated_{s}"));
            estimates.push(self.params.elevated[s - 1]);
        }
        names.push("prevalence".into());
        estimates.push(self.params.prevalence);
        let ses = self
            .standard_errors
            .clone()
            .unwrap_or_else(|| vec![f64::NAN; 2 * levels + 1]);
        let mut fit = FitResult::new(names, estimates, ses);
        fit.loglik = self.loglik();
        fit.converged = self.converged;
        fit.iterations = self.iterations;
        fit.boundary = self.boundary;
        fit
    }
}

fn default_init(data: &LatentDataset) -> LatentClassParams {
    let levels = data.levels();
    let mut pooled = vec![0.5; levels];
    for s in 0..levels {
        let trials: u64 = data.counts.iter().map(|c| c.trials[s]).sum();
        let correct: u64 = data.counts.iter().map(|c| c.correct[s]).sum();
        if trials > 0 {
            pooled[s] = correct as f64 / trials as f64;
        }
    }
    let baseline = pooled.iter().map(|p| (p - 0.05).clamp(0.01, 0.99)).collect();
    let elevated = pooled.iter().map(|p| (p + 0.05).clamp(0.01, 0.99)).collect();
    LatentClassParams { baseline, elevated, prevalence: 0.5, offset: f64::NAN }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Fit the two-class mixture by EM.
pub fn fit_latent_class(data: &LatentDataset, opts: &EmOptions) -> Result<EmFit> {
    if data.subjects() < 2 {
        return Err(Error::TooFewValues { need: 2, got: data.subjects() });
    }
    let mut params = opts.init.clone().unwrap_or_else(|| default_init(data));
    if params.levels() != data.levels() {
        return Err(Error::invalid("initial parameters do not match the level count"));
    }

    let mut trace = vec![observed_loglik(&params, &data.counts)];
    let mut converged = false;
    let mut iterations = 0;
    let mut held = vec![false; 2 * data.levels()];
    let mut weights = vec![params.prevalence; data.subjects()];
    for iter in 1..=opts.max_iter {
        iterations = iter;
        let comps = em_weight_components(data, &params, opts.weight_mode, opts.key)?;
        let (mut baseline, mut elevated, step_held) = em_m_step(&comps.weights, &data.counts, &params);
        let mut tau = match opts.tau_update {
            TauUpdate::PosteriorMean => {
                clamp_unit(mean(&comps.weights))
            }
            TauUpdate::HeuristicInversion => {
                let l0: Vec<f64> =
                    data.counts.iter().map(|c| conditional_loglik(&baseline, c)).collect();
                let la: Vec<f64> =
                    data.counts.iter().map(|c| conditional_loglik(&elevated, c)).collect();
                em_tau_update(&comps.weights, &l0, &la, &comps.log_design_ratio)
            }
        };
        held = step_held;

        // Identification: the elevated class is the one with the higher mean
        // success probability; swapping labels maps tau to 1 - tau and leaves
        // the mixture unchanged.
        if mean(&elevated) < mean(&baseline) {
            std::mem::swap(&mut baseline, &mut elevated);
            tau = 1.0 - tau;
            let levels = data.levels();
            for s in 0..levels {
                held.swap(s, levels + s);
            }
        }

        let delta = baseline
            .iter()
            .zip(&params.baseline)
            .chain(elevated.iter().zip(&params.elevated))
            .map(|(a, b)| (a - b).abs())
            .fold((tau - params.prevalence).abs(), f64::max);

        params = LatentClassParams { baseline, elevated, prevalence: tau, offset: params.offset };
        weights = comps.weights;
        trace.push(observed_loglik(&params, &data.counts));
        if delta < opts.tol {
            converged = true;
            break;
        }
    }

    let boundary = params
        .baseline
        .iter()
        .chain(params.elevated.iter())
        .any(|p| *p <= LOG_EPS || *p >= 1.0 - LOG_EPS);

    let standard_errors = if opts.standard_errors {
        Some(em_standard_errors(&params, &data.counts, &held))
    } else {
        None
    };

    Ok(EmFit {
        params,
        loglik_trace: trace,
        weights,
        held,
        converged,
        iterations,
        boundary,
        standard_errors,
    })
}

/// Standard errors from the numerically differentiated observed information.
/// Held or boundary cells get NaN.
fn em_standard_errors(
    params: &LatentClassParams,
    counts: &[LevelCounts],
    held: &[bool],
) -> Vec<f64> {
    let levels = params.levels();
    let dim = 2 * levels + 1;
    // Active coordinates: estimable and interior.
    let mut active = Vec::new();
    let flat: Vec<f64> = params
        .baseline
        .iter()
        .chain(params.elevated.iter())
        .copied()
        .chain(std::iter::once(params.prevalence))
        .collect();
    for (k, &v) in flat.iter().enumerate() {
        let is_held = k < 2 * levels && held[k];
        let interior = v > 1e-8 && v < 1.0 - 1e-8;
        if !is_held && interior {
            active.push(k);
        }
    }

    let mut ses = vec![f64::NAN; dim];
    if active.is_empty() {
        return ses;
    }
    let mut objective = |x: &[f64]| {
        let mut full = flat.clone();
        for (j, &k) in active.iter().enumerate() {
            full[k] = x[j];
        }
        let p = LatentClassParams {
            baseline: full[..levels].to_vec(),
            elevated: full[levels..2 * levels].to_vec(),
            prevalence: full[2 * levels],
            offset: params.offset,
        };
        -observed_loglik(&p, counts)
    };
    let x0: Vec<f64> = active.iter().map(|&k| flat[k]).collect();
    let hess = central_hessian(&mut objective, &x0, 1e-5);
    if let Some(cov) = invert_symmetric(&hess) {
        for (j, &k) in active.iter().enumerate() {
            let v = cov[j][j];
            if v > 0.0 {
                ses[k] = v.sqrt();
            }
        }
    }
    ses
}

/// Analytic score of the observed-data log-likelihood in
/// (baseline_1.., elevated_1.., prevalence).
pub fn latent_class_score(params: &LatentClassParams, counts: &[LevelCounts]) -> Vec<f64> {
    let levels = params.levels();
    let tau = clamp_unit(params.prevalence);
    let mut score = vec![0.0; 2 * levels + 1];
    for c in counts {
        let l0 = conditional_loglik(&params.baseline, c);
        let la = conditional_loglik(&params.elevated, c);
        let w = weight_from_parts(tau, l0 - la);
        for s in 0..levels {
            let t = c.trials[s] as f64;
            if t == 0.0 {
                continue;
            }
            let m = c.correct[s] as f64;
            let p0 = clamp_unit(params.baseline[s]);
            let pa = clamp_unit(params.elevated[s]);
            score[s] += (1.0 - w) * (m / p0 - (t - m) / (1.0 - p0));
            score[levels + s] += w * (m / pa - (t - m) / (1.0 - pa));
        }
        score[2 * levels] += w / tau - (1.0 - w) / (1.0 - tau);
    }
    score
}
