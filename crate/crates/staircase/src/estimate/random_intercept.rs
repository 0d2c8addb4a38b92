//! Marginal maximum likelihood for the logistic model with a Gaussian random
//! intercept.
//!
//! Each subject contributes the integral of its Bernoulli likelihood against
//! the normal random-effect density. The integral is evaluated by adaptive
//! Gauss-Hermite quadrature: the integrand's mode and curvature are found by
//! Newton iteration (the log-integrand is strictly concave) and the rule is
//! recentered and rescaled there, which keeps a moderate number of nodes
//! accurate across subjects. The outer optimization is quasi-Newton (BFGS) in
//! (intercept, slope, log sd), with the gradient taken as the posterior
//! expectation of the complete-data score at the quadrature nodes.

use super::{BinomialObs, FitResult};
use crate::error::{Error, Result};
use crate::model::{logit, Theta};
use crate::numeric::{central_hessian, invert_symmetric, logsumexp, minimize_bfgs, BfgsOptions};

const LN_2PI: f64 = 1.8378770664093453;

/// Nodes and weights of the n-point Gauss-Hermite rule (weight exp(-x^2)),
/// by Newton iteration on the orthonormal Hermite recurrence.
pub(crate) fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    let mut z = 0.0f64;
    for i in 0..m {
        // Initial guesses for the roots, largest first.
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            // Orthonormal Hermite values at z via the three-term recurrence.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // Ascending order.
    nodes.reverse();
    (nodes, weights)
}

struct Quadrature {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Quadrature {
    fn new(points: usize) -> Self {
        let (nodes, weights) = gauss_hermite(points);
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self { nodes, log_weights }
    }
}

/// log of the joint density of one subject's responses and random effect
/// `alpha`, up to the response part: log phi(alpha; 0, sd) + conditional
/// Bernoulli log-likelihood.
fn log_joint(obs: &[BinomialObs], theta: &Theta, sd: f64, alpha: f64) -> f64 {
    let mut ll = -0.5 * (alpha / sd).powi(2) - sd.ln() - 0.5 * LN_2PI;
    for o in obs {
        let p = theta.prob(alpha, o.intensity);
        ll += o.successes * p.ln() + (o.trials - o.successes) * (1.0 - p).ln();
    }
    ll
}

/// Mode and curvature scale of the log joint in alpha. The log joint is
/// strictly concave, so undamped Newton iteration converges.
fn integrand_mode(obs: &[BinomialObs], theta: &Theta, sd: f64, start: f64) -> Result<(f64, f64)> {
    let mut alpha = start;
    for _ in 0..100 {
        let mut g = -alpha / (sd * sd);
        let mut h = -1.0 / (sd * sd);
        for o in obs {
            let p = theta.prob(alpha, o.intensity);
            g += o.successes - o.trials * p;
            h -= o.trials * p * (1.0 - p);
        }
        let step = g / h;
        alpha -= step;
        if !alpha.is_finite() {
            return Err(Error::Quadrature("mode search diverged".into()));
        }
        if step.abs() < 1e-12 {
            let mut h = -1.0 / (sd * sd);
            for o in obs {
                let p = theta.prob(alpha, o.intensity);
                h -= o.trials * p * (1.0 - p);
            }
            return Ok((alpha, (-1.0 / h).sqrt()));
        }
    }
    Err(Error::Quadrature("mode search did not converge".into()))
}

fn log_marginal_at(
    obs: &[BinomialObs],
    theta: &Theta,
    sd: f64,
    quad: &Quadrature,
    mode: f64,
    scale: f64,
) -> f64 {
    let c = std::f64::consts::SQRT_2 * scale;
    let terms: Vec<f64> = quad
        .nodes
        .iter()
        .zip(&quad.log_weights)
        .map(|(&x, &lw)| lw + x * x + log_joint(obs, theta, sd, mode + c * x))
        .collect();
    c.ln() + logsumexp(&terms)
}

/// Marginal log-likelihood contribution of one subject, by adaptive
/// Gauss-Hermite quadrature with `points` nodes. With `sd == 0` the random
/// effect is degenerate at zero and no quadrature is involved.
pub fn subject_log_marginal(obs: &[BinomialObs], theta: &Theta, sd: f64, points: usize) -> Result<f64> {
    if sd == 0.0 {
        let mut ll = 0.0;
        for o in obs {
            let p = theta.prob(0.0, o.intensity);
            ll += o.successes * p.ln() + (o.trials - o.successes) * (1.0 - p).ln();
        }
        return Ok(ll);
    }
    let quad = Quadrature::new(points);
    let (mode, scale) = integrand_mode(obs, theta, sd, 0.0)?;
    Ok(log_marginal_at(obs, theta, sd, &quad, mode, scale))
}

#[derive(Debug, Clone)]
pub struct RandomInterceptOptions {
    pub quad_points: usize,
    /// Pin the random-effect sd instead of estimating it; `Some(0.0)`
    /// reduces the model to the pooled logistic fit.
    pub fix_sd: Option<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub standard_errors: bool,
}

impl Default for RandomInterceptOptions {
    fn default() -> Self {
        Self { quad_points: 21, fix_sd: None, max_iter: 300, grad_tol: 1e-5, standard_errors: true }
    }
}

/// The sd below which a free fit is reported as a boundary fit.
const SD_BOUNDARY: f64 = 1e-4;

struct Objective<'a> {
    data: &'a [Vec<BinomialObs>],
    quad: Quadrature,
    fix_sd: Option<f64>,
    /// Warm-start modes, one per subject.
    modes: Vec<f64>,
    failed: bool,
}

impl Objective<'_> {
    /// Negative marginal log-likelihood and its gradient in the working
    /// parameters (intercept, slope[, log sd]). The gradient is the posterior
    /// expectation of the complete-data score, evaluated with the quadrature
    /// weights; the quadrature is accurate enough that this matches the
    /// gradient of the computed objective to working precision.
    fn eval(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let theta = Theta::new(x[0], x[1]);
        let sd = self.fix_sd.unwrap_or_else(|| x[2].exp());
        let free_sd = self.fix_sd.is_none();
        let mut value = 0.0;
        let mut grad = vec![0.0; x.len()];

        if sd == 0.0 {
            for obs in self.data {
                for o in obs {
                    let p = theta.prob(0.0, o.intensity);
                    value -= o.successes * p.ln() + (o.trials - o.successes) * (1.0 - p).ln();
                    let resid = o.successes - o.trials * p;
                    grad[0] -= resid;
                    grad[1] -= resid * o.intensity;
                }
            }
            return (value, grad);
        }

        let c_nodes = self.quad.nodes.len();
        let mut log_terms = vec![0.0; c_nodes];
        for (i, obs) in self.data.iter().enumerate() {
            let Ok((mode, scale)) = integrand_mode(obs, &theta, sd, self.modes[i]) else {
                self.failed = true;
                return (f64::INFINITY, grad);
            };
            self.modes[i] = mode;
            let c = std::f64::consts::SQRT_2 * scale;
            for (j, (&xj, &lw)) in self.quad.nodes.iter().zip(&self.quad.log_weights).enumerate() {
                log_terms[j] = lw + xj * xj + log_joint(obs, &theta, sd, mode + c * xj);
            }
            let lse = logsumexp(&log_terms);
            value -= c.ln() + lse;

            // Posterior-weighted complete-data score.
            for (j, &xj) in self.quad.nodes.iter().enumerate() {
                let q = (log_terms[j] - lse).exp();
                let alpha = mode + c * xj;
                let mut da = 0.0;
                let mut db = 0.0;
                for o in obs {
                    let p = theta.prob(alpha, o.intensity);
                    let resid = o.successes - o.trials * p;
                    da += resid;
                    db += resid * o.intensity;
                }
                grad[0] -= q * da;
                grad[1] -= q * db;
                if free_sd {
                    // d/d(log sd) of log phi(alpha; 0, sd).
                    grad[2] -= q * ((alpha / sd).powi(2) - 1.0);
                }
            }
        }
        (value, grad)
    }
}

/// Fit (intercept, slope, effect_sd) by marginal maximum likelihood.
pub fn fit_random_intercept(
    data: &[Vec<BinomialObs>],
    opts: &RandomInterceptOptions,
) -> Result<FitResult> {
    if data.len() < 2 {
        return Err(Error::TooFewValues { need: 2, got: data.len() });
    }
    if let Some(sd) = opts.fix_sd {
        if sd < 0.0 {
            return Err(Error::invalid("fixed sd must be nonnegative"));
        }
    }

    // Start from the pooled logistic fit when it exists.
    let pooled: Vec<BinomialObs> = pool(data);
    let start_theta = match super::logistic::fit_logistic(&pooled) {
        Ok(fit) if fit.converged => {
            Theta::new(fit.estimate("intercept").unwrap(), fit.estimate("slope").unwrap())
        }
        _ => {
            let total: f64 = pooled.iter().map(|o| o.trials).sum();
            let succ: f64 = pooled.iter().map(|o| o.successes).sum();
            Theta::new(logit((succ / total).clamp(1e-3, 1.0 - 1e-3)), 0.0)
        }
    };

    let mut objective = Objective {
        data,
        quad: Quadrature::new(opts.quad_points),
        fix_sd: opts.fix_sd,
        modes: vec![0.0; data.len()],
        failed: false,
    };
    let x0 = if opts.fix_sd.is_some() {
        vec![start_theta.intercept, start_theta.slope]
    } else {
        vec![start_theta.intercept, start_theta.slope, 0.0]
    };
    let bfgs = BfgsOptions { max_iter: opts.max_iter, grad_tol: opts.grad_tol, ..Default::default() };
    let out = minimize_bfgs(|x| objective.eval(x), &x0, &bfgs);
    if objective.failed {
        return Err(Error::Quadrature("marginal likelihood evaluation failed".into()));
    }

    let sd = opts.fix_sd.unwrap_or_else(|| out.x[2].exp());
    let boundary = opts.fix_sd.is_none() && sd < SD_BOUNDARY;
    let loglik = -out.value;

    let names = vec!["intercept".to_string(), "slope".to_string(), "effect_sd".to_string()];
    let estimates = vec![out.x[0], out.x[1], sd];
    let mut ses = vec![f64::NAN; 3];
    let mut vcov = None;
    if opts.standard_errors && out.converged {
        // Observed information in (intercept, slope, sd) itself.
        let quad_points = opts.quad_points;
        let mut f = |p: &[f64]| {
            let theta = Theta::new(p[0], p[1]);
            let sd = p[2].max(1e-12);
            data.iter()
                .map(|obs| subject_log_marginal(obs, &theta, sd, quad_points).unwrap_or(f64::NAN))
                .sum::<f64>()
                * -1.0
        };
        if !boundary && opts.fix_sd.is_none() {
            let hess = central_hessian(&mut f, &estimates, 1e-4);
            if let Some(cov) = invert_symmetric(&hess) {
                for k in 0..3 {
                    if cov[k][k] > 0.0 {
                        ses[k] = cov[k][k].sqrt();
                    }
                }
                vcov = Some(cov.iter().flatten().copied().collect());
            }
        } else {
            // sd pinned (or at the boundary): information over (a, b) only.
            let (a, b) = (estimates[0], estimates[1]);
            let mut f2 = |p: &[f64]| f(&[p[0], p[1], sd]);
            let hess = central_hessian(&mut f2, &[a, b], 1e-4);
            if let Some(cov) = invert_symmetric(&hess) {
                ses[0] = cov[0][0].max(0.0).sqrt();
                ses[1] = cov[1][1].max(0.0).sqrt();
                vcov = Some(vec![
                    cov[0][0], cov[0][1], f64::NAN,
                    cov[1][0], cov[1][1], f64::NAN,
                    f64::NAN, f64::NAN, f64::NAN,
                ]);
            }
        }
    }

    let mut fit = FitResult::new(names, estimates, ses);
    fit.loglik = loglik;
    fit.converged = out.converged;
    fit.iterations = out.iterations;
    fit.boundary = boundary;
    fit.vcov = vcov;
    Ok(fit)
}

fn pool(data: &[Vec<BinomialObs>]) -> Vec<BinomialObs> {
    let mut all: Vec<BinomialObs> = data.iter().flatten().copied().collect();
    all.sort_by(|a, b| a.intensity.total_cmp(&b.intensity));
    let mut out: Vec<BinomialObs> = Vec::new();
    for o in all {
        match out.last_mut() {
            Some(last) if last.intensity == o.intensity => {
                last.trials += o.trials;
                last.successes += o.successes;
            }
            _ => out.push(o),
        }
    }
    out
}
