//! Logistic maximum likelihood via Newton-Raphson on grouped binomial data.

use super::{BinomialObs, FitResult};
use crate::error::{Error, Result};
use crate::model::{logit, Theta};

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
/// A fitted logit span across the observed intensity range beyond this bound
/// means the responses are numerically separated.
const LOGIT_SPAN_BOUND: f64 = 300.0;

/// Bernoulli log-likelihood of grouped data under the logistic curve.
pub fn logistic_loglik(theta: &Theta, obs: &[BinomialObs]) -> f64 {
    obs.iter()
        .map(|o| {
            let p = theta.prob(0.0, o.intensity);
            o.successes * p.ln() + (o.trials - o.successes) * (1.0 - p).ln()
        })
        .sum()
}

/// Exact gradient of [`logistic_loglik`] in (intercept, slope).
pub fn logistic_score(theta: &Theta, obs: &[BinomialObs]) -> [f64; 2] {
    let mut g = [0.0; 2];
    for o in obs {
        let resid = o.successes - o.trials * theta.prob(0.0, o.intensity);
        g[0] += resid;
        g[1] += resid * o.intensity;
    }
    g
}

fn information(theta: &Theta, obs: &[BinomialObs]) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 2]; 2];
    for o in obs {
        let p = theta.prob(0.0, o.intensity);
        let w = o.trials * p * (1.0 - p);
        m[0][0] += w;
        m[0][1] += w * o.intensity;
        m[1][1] += w * o.intensity * o.intensity;
    }
    m[1][0] = m[0][1];
    m
}

fn solve2(m: [[f64; 2]; 2], v: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some([
        (m[1][1] * v[0] - m[0][1] * v[1]) / det,
        (m[0][0] * v[1] - m[1][0] * v[0]) / det,
    ])
}

/// Fit (intercept, slope) by Newton-Raphson with step halving.
///
/// Completely degenerate responses (all correct or all incorrect) are a
/// separation error. Quasi-complete separation discovered during iteration is
/// reported as a non-converged fit with the `diverging_slope` flag set.
/// A single distinct intensity cannot identify both parameters.
pub fn fit_logistic(obs: &[BinomialObs]) -> Result<FitResult> {
    let total: f64 = obs.iter().map(|o| o.trials).sum();
    let succ: f64 = obs.iter().map(|o| o.successes).sum();
    if total == 0.0 {
        return Err(Error::invalid("no trials"));
    }
    let occupied: Vec<&BinomialObs> = obs.iter().filter(|o| o.trials > 0.0).collect();
    let lo = occupied.iter().map(|o| o.intensity).fold(f64::INFINITY, f64::min);
    let hi = occupied.iter().map(|o| o.intensity).fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(Error::RankDeficient);
    }
    if succ == 0.0 {
        return Err(Error::Separation("all responses incorrect".into()));
    }
    if succ == total {
        return Err(Error::Separation("all responses correct".into()));
    }

    let slope_bound = LOGIT_SPAN_BOUND / (hi - lo);
    let mut theta = Theta::new(logit((succ / total).clamp(1e-6, 1.0 - 1e-6)), 0.0);
    let mut loglik = logistic_loglik(&theta, obs);
    let mut iterations = 0;
    let mut converged = false;
    for iter in 1..=MAX_ITER {
        iterations = iter;
        let score = logistic_score(&theta, obs);
        if score[0].abs().max(score[1].abs()) < SCORE_TOL {
            converged = true;
            iterations = iter - 1;
            break;
        }
        let info = information(&theta, obs);
        let Some(step) = solve2(info, score) else {
            break;
        };
        // Step halving keeps the ascent monotone.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = Theta::new(theta.intercept + scale * step[0], theta.slope + scale * step[1]);
            let cand_ll = logistic_loglik(&cand, obs);
            if cand_ll.is_finite() && cand_ll >= loglik - 1e-12 {
                theta = cand;
                loglik = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || theta.slope.abs() > slope_bound {
            break;
        }
    }

    let diverged = !converged;
    let (se, vcov) = if converged {
        let info = information(&theta, obs);
        match solve2(info, [1.0, 0.0]).zip(solve2(info, [0.0, 1.0])) {
            Some((c0, c1)) => (
                vec![c0[0].max(0.0).sqrt(), c1[1].max(0.0).sqrt()],
                Some(vec![c0[0], c0[1], c1[0], c1[1]]),
            ),
            None => (vec![f64::NAN, f64::NAN], None),
        }
    } else {
        (vec![f64::NAN, f64::NAN], None)
    };

    let mut fit = FitResult::new(
        vec!["intercept".into(), "slope".into()],
        vec![theta.intercept, theta.slope],
        se,
    );
    fit.loglik = loglik;
    fit.converged = converged;
    fit.iterations = iterations;
    fit.diverging_slope = diverged;
    fit.vcov = vcov;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EffectModel, IntensityGrid};
    use crate::rng::StreamKey;
    use crate::sim::{simulate_dataset, ScenarioConfig, Scheme};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> Vec<BinomialObs> {
        vec![
            BinomialObs { intensity: -1.0, trials: 4.0, successes: 1.0 },
            BinomialObs { intensity: 1.0, trials: 4.0, successes: 3.0 },
        ]
    }

    #[test]
    fn single_trial_loglik() {
        let obs = [BinomialObs { intensity: 0.0, trials: 1.0, successes: 1.0 }];
        let ll = logistic_loglik(&Theta::new(0.0, 1.0), &obs);
        assert!((ll - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_point_closed_form() {
        // Success proportions 3/4 and 1/4 at s = +-1 invert to a symmetric
        // logit fit: intercept 0, slope log(3).
        let fit = fit_logistic(&two_point()).unwrap();
        assert!(fit.converged);
        assert!(fit.estimate("intercept").unwrap().abs() < 1e-9);
        assert!((fit.estimate("slope").unwrap() - 3f64.ln()).abs() < 1e-9);
        let theta = Theta::new(fit.estimate("intercept").unwrap(), fit.estimate("slope").unwrap());
        let score = logistic_score(&theta, &two_point());
        assert!(score[0].abs() < 1e-10 && score[1].abs() < 1e-10);
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let obs: Vec<BinomialObs> = (0..6)
                .map(|k| {
                    let n = rng.random_range(1..20) as f64;
                    BinomialObs {
                        intensity: -1.0 + 0.4 * k as f64 + rng.random_range(-0.05..0.05),
                        trials: n,
                        successes: rng.random_range(0..=n as u64) as f64,
                    }
                })
                .collect();
            let theta = Theta::new(rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
            let analytic = logistic_score(&theta, &obs);
            let h = 1e-6;
            for (i, g) in analytic.iter().enumerate() {
                let mut up = theta;
                let mut dn = theta;
                if i == 0 {
                    up.intercept += h;
                    dn.intercept -= h;
                } else {
                    up.slope += h;
                    dn.slope -= h;
                }
                let fd = (logistic_loglik(&up, &obs) - logistic_loglik(&dn, &obs)) / (2.0 * h);
                let denom = g.abs().max(1.0);
                assert!(((g - fd) / denom).abs() < 1e-6, "component {i}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn degenerate_inputs() {
        let all_correct = vec![
            BinomialObs { intensity: 0.0, trials: 3.0, successes: 3.0 },
            BinomialObs { intensity: 1.0, trials: 3.0, successes: 3.0 },
        ];
        assert!(matches!(fit_logistic(&all_correct), Err(Error::Separation(_))));
        let single = vec![BinomialObs { intensity: 0.3, trials: 10.0, successes: 4.0 }];
        assert!(matches!(fit_logistic(&single), Err(Error::RankDeficient)));
    }

    #[test]
    fn separated_data_flags_diverging_slope() {
        // Perfectly ordered responses: correct iff intensity above 0.
        let obs = vec![
            BinomialObs { intensity: -1.0, trials: 5.0, successes: 0.0 },
            BinomialObs { intensity: -0.5, trials: 5.0, successes: 0.0 },
            BinomialObs { intensity: 0.5, trials: 5.0, successes: 5.0 },
            BinomialObs { intensity: 1.0, trials: 5.0, successes: 5.0 },
        ];
        let fit = fit_logistic(&obs).unwrap();
        assert!(!fit.converged);
        assert!(fit.diverging_slope);
        assert!(fit.estimate("slope").unwrap() > 10.0);
    }

    #[test]
    fn recovers_truth_on_large_fixed_design() {
        let cfg = ScenarioConfig {
            scheme: Scheme::Fd,
            effect: EffectModel::None,
            subjects: 100,
            trials: 100,
            grid: IntensityGrid::new(0.2, 10).unwrap(),
            theta: Theta::new(0.05, 9.0),
            replications: 1,
            seed: 77,
        };
        let data = simulate_dataset(&cfg, StreamKey::new(cfg.seed));
        let fit = fit_logistic(&super::super::group_pooled(&data)).unwrap();
        assert!(fit.converged);
        let a = fit.estimate("intercept").unwrap();
        let b = fit.estimate("slope").unwrap();
        let se_a = fit.se("intercept").unwrap();
        let se_b = fit.se("slope").unwrap();
        assert!((a - 0.05).abs() < 3.0 * se_a, "a = {a} +- {se_a}");
        assert!((b - 9.0).abs() < 3.0 * se_b, "b = {b} +- {se_b}");
    }
}
