//! Stimulus-allocation rules: fixed (pre-randomized) designs, the up-down
//! rule and its one-up-two-down variant, and the analytic recursion for the
//! intensity distribution of an up-down walk on the unbounded integer lattice.

use crate::error::{Error, Result};
use crate::model::Level;
use rand::Rng;

/// One up-down transition: a correct response steps the intensity down, an
/// incorrect one steps it up, clamped to `1..=levels`.
pub fn updown_next(level: Level, correct: bool, levels: usize) -> Level {
    assert!(level >= 1 && level <= levels, "level {level} out of 1..={levels}");
    let candidate = level as i64 - if correct { 1 } else { -1 };
    candidate.clamp(1, levels as i64) as Level
}

/// State of a one-up-two-down track: the current level and how many
/// consecutive correct responses have accrued since the last move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpDownState {
    pub level: Level,
    pub consecutive_correct: u8,
}

impl UpDownState {
    pub fn new(level: Level) -> Self {
        Self { level, consecutive_correct: 0 }
    }
}

/// One-up-two-down transition: step down only after two consecutive correct
/// responses, step up on any incorrect response. Targets accuracy 1/sqrt(2).
pub fn one_up_two_down_next(state: UpDownState, correct: bool, levels: usize) -> UpDownState {
    if !correct {
        return UpDownState::new(updown_next(state.level, false, levels));
    }
    if state.consecutive_correct == 0 {
        UpDownState { level: state.level, consecutive_correct: 1 }
    } else {
        UpDownState::new(updown_next(state.level, true, levels))
    }
}

/// A fixed design: a probability distribution over levels, determined before
/// the experiment and never updated from responses.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDesign {
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl FixedDesign {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("is empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights("has a negative or non-finite entry".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidWeights(format!("sums to {total}, not 1")));
        }
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        // Guard the top bucket against rounding in the partial sums.
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self { weights, cumulative })
    }

    pub fn uniform(levels: usize) -> Self {
        let w = 1.0 / levels as f64;
        Self::new(vec![w; levels]).expect("uniform weights are valid")
    }

    pub fn levels(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draw a level (1-based) with the design's probabilities.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Level {
        let u: f64 = rng.random();
        match self.cumulative.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(idx) | Err(idx) => (idx + 1).min(self.levels()),
        }
    }
}

/// A probability mass function on a finite window of the integer lattice,
/// used to iterate the up-down intensity recursion with the boundaries
/// ignored. Mass that would cross the window edge is tracked as lost.
#[derive(Debug, Clone)]
pub struct LatticePmf {
    origin: i64,
    mass: Vec<f64>,
    lost: f64,
}

/// Tolerated total mass escaping the window before stepping fails.
pub const WINDOW_TOLERANCE: f64 = 1e-9;

impl LatticePmf {
    /// Point mass at `at`, on the window `[at - half_width, at + half_width]`.
    pub fn delta(at: i64, half_width: usize) -> Self {
        let mut mass = vec![0.0; 2 * half_width + 1];
        mass[half_width] = 1.0;
        Self { origin: at - half_width as i64, mass, lost: 0.0 }
    }

    /// Uniform mass on `[lo, hi]`, padded by `pad` cells on each side.
    pub fn uniform(lo: i64, hi: i64, pad: usize) -> Self {
        assert!(hi >= lo);
        let n = (hi - lo) as usize + 1;
        let mut mass = vec![0.0; n + 2 * pad];
        for cell in mass.iter_mut().skip(pad).take(n) {
            *cell = 1.0 / n as f64;
        }
        Self { origin: lo - pad as i64, mass, lost: 0.0 }
    }

    pub fn support(&self) -> std::ops::RangeInclusive<i64> {
        self.origin..=(self.origin + self.mass.len() as i64 - 1)
    }

    pub fn mass_at(&self, s: i64) -> f64 {
        if s < self.origin {
            return 0.0;
        }
        self.mass.get((s - self.origin) as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Mass that has escaped the window across all steps so far.
    pub fn lost(&self) -> f64 {
        self.lost
    }

    /// One step of the unbounded up-down recursion: mass at `s` comes from a
    /// correct response at `s + 1` or an incorrect response at `s - 1`, where
    /// `success(s)` is the success probability at lattice site `s`.
    pub fn step(&self, success: impl Fn(i64) -> f64) -> Result<Self> {
        let n = self.mass.len();
        let mut out = vec![0.0; n];
        let mut lost = self.lost;
        for (i, &m) in self.mass.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let site = self.origin + i as i64;
            let p = success(site);
            let down = p * m;
            let up = (1.0 - p) * m;
            if i == 0 {
                lost += down;
            } else {
                out[i - 1] += down;
            }
            if i == n - 1 {
                lost += up;
            } else {
                out[i + 1] += up;
            }
        }
        if lost > WINDOW_TOLERANCE {
            return Err(Error::WindowTooSmall { lost, tol: WINDOW_TOLERANCE });
        }
        Ok(Self { origin: self.origin, mass: out, lost })
    }

    /// Iterate [`LatticePmf::step`] `steps` times.
    pub fn evolve(&self, success: impl Fn(i64) -> f64, steps: usize) -> Result<Self> {
        let mut pmf = self.clone();
        for _ in 0..steps {
            pmf = pmf.step(&success)?;
        }
        Ok(pmf)
    }

    /// Total variation distance to another distribution given as mass lookup.
    pub fn total_variation(&self, other: impl Fn(i64) -> f64) -> f64 {
        0.5 * self
            .support()
            .map(|s| (self.mass_at(s) - other(s)).abs())
            .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Theta;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn updown_steps_and_clamps() {
        assert_eq!(updown_next(5, true, 10), 4);
        assert_eq!(updown_next(5, false, 10), 6);
        assert_eq!(updown_next(1, true, 10), 1);
        assert_eq!(updown_next(10, false, 10), 10);
        for level in 1..=10 {
            for correct in [false, true] {
                let next = updown_next(level, correct, 10);
                assert!((1..=10).contains(&next));
                assert!((next as i64 - level as i64).abs() <= 1);
            }
        }
    }

    #[test]
    #[should_panic]
    fn updown_rejects_out_of_range() {
        updown_next(11, true, 10);
    }

    #[test]
    fn one_up_two_down_transitions() {
        let s = UpDownState::new(5);
        let s1 = one_up_two_down_next(s, true, 10);
        assert_eq!(s1, UpDownState { level: 5, consecutive_correct: 1 });
        let s2 = one_up_two_down_next(s1, true, 10);
        assert_eq!(s2, UpDownState { level: 4, consecutive_correct: 0 });
        let s3 = one_up_two_down_next(s1, false, 10);
        assert_eq!(s3, UpDownState { level: 6, consecutive_correct: 0 });
    }

    #[test]
    fn fixed_design_point_mass() {
        let mut w = vec![0.0; 5];
        w[2] = 1.0;
        let design = FixedDesign::new(w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(design.sample(&mut rng), 3);
        }
    }

    #[test]
    fn fixed_design_zero_weight_is_never_drawn() {
        let design = FixedDesign::new(vec![0.5, 0.0, 0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert_ne!(design.sample(&mut rng), 2);
        }
    }

    #[test]
    fn fixed_design_uniform_frequencies() {
        let levels = 10;
        let design = FixedDesign::uniform(levels);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 1_000_000;
        let mut counts = vec![0u64; levels];
        for _ in 0..draws {
            counts[design.sample(&mut rng) - 1] += 1;
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.1).abs() < 0.005, "freq {freq}");
        }
    }

    #[test]
    fn fixed_design_validation() {
        assert!(FixedDesign::new(vec![0.5, 0.4]).is_err());
        assert!(FixedDesign::new(vec![-0.5, 1.5]).is_err());
        assert!(FixedDesign::new(vec![]).is_err());
    }

    #[test]
    fn pmf_step_symmetric_coin() {
        let pmf = LatticePmf::delta(0, 4).step(|_| 0.5).unwrap();
        assert!((pmf.mass_at(-1) - 0.5).abs() < 1e-15);
        assert!((pmf.mass_at(1) - 0.5).abs() < 1e-15);
        assert_eq!(pmf.mass_at(0), 0.0);
    }

    #[test]
    fn pmf_step_always_correct_walker_steps_down() {
        let pmf = LatticePmf::delta(3, 4).step(|_| 1.0).unwrap();
        assert!((pmf.mass_at(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pmf_step_logistic_example() {
        // One step from a point mass at 1 under the unit logistic curve.
        let theta = Theta::new(0.0, 1.0);
        let pmf = LatticePmf::delta(1, 4).step(|s| theta.prob(0.0, s as f64)).unwrap();
        assert!((pmf.mass_at(0) - 0.7310585786300049).abs() < 1e-12);
        assert!((pmf.mass_at(2) - 0.2689414213699951).abs() < 1e-12);
    }

    #[test]
    fn pmf_preserves_mass_and_nonnegativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-0.8..0.8);
            let theta = Theta::new(a, b);
            let steps = rng.random_range(1..20usize);
            let pmf = LatticePmf::delta(0, 25)
                .evolve(|s| theta.prob(0.0, s as f64), steps)
                .unwrap();
            assert!((pmf.total() - 1.0).abs() < 1e-12);
            assert!(pmf.support().all(|s| pmf.mass_at(s) >= 0.0));
        }
    }

    #[test]
    fn pmf_window_too_small_errors() {
        let pmf = LatticePmf::delta(0, 1);
        // Two steps push mass two sites away; a half-width-1 window must fail.
        let res = pmf.step(|_| 0.5).and_then(|p| p.step(|_| 0.5));
        assert!(matches!(res, Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn pmf_matches_unclamped_monte_carlo_walk() {
        // The recursion iterated T-1 times from a uniform start must agree
        // with simulated unclamped up-down walks in total variation.
        let theta = Theta::new(0.0, 1.0);
        let success = |s: i64| theta.prob(0.0, s as f64);
        let trials = 10;
        let pmf = LatticePmf::uniform(1, 10, 4 * trials)
            .evolve(success, trials - 1)
            .unwrap();

        let walks = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..walks {
            let mut s: i64 = rng.random_range(1..=10);
            for _ in 0..trials - 1 {
                let correct = rng.random::<f64>() < success(s);
                s += if correct { -1 } else { 1 };
            }
            *counts.entry(s).or_insert(0u64) += 1;
        }
        let empirical = |s: i64| counts.get(&s).copied().unwrap_or(0) as f64 / walks as f64;
        let tv = pmf.total_variation(empirical);
        assert!(tv < 0.01, "total variation {tv}");
    }

    #[test]
    fn one_up_two_down_is_drift_free_at_target_accuracy() {
        // At a flat psychometric function fixed at 1/sqrt(2) the rule has
        // zero expected drift. Estimate the drift per 10^4 trials with the
        // conditional-expectation (Rao-Blackwellised) estimator: given the
        // streak counter, the expected step is (1-p) upward minus p downward
        // when a move can trigger.
        let p = std::f64::consts::FRAC_1_SQRT_2;
        let levels = 2_000_001;
        let mut state = UpDownState::new(1_000_001);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let windows = 8_000usize;
        let per_window = 10_000usize;
        let mut total = 0.0;
        for _ in 0..windows {
            let mut acc = 0.0;
            for _ in 0..per_window {
                acc += if state.consecutive_correct == 0 {
                    1.0 - p
                } else {
                    1.0 - 2.0 * p
                };
                let correct = rng.random::<f64>() < p;
                state = one_up_two_down_next(state, correct, levels);
            }
            total += acc;
        }
        let drift = total / windows as f64;
        assert!(drift.abs() < 0.5, "drift per 10^4 trials: {drift}");
        // The walk must stay far from the clamps for the estimate to be valid.
        assert!(state.level > 900_000 && state.level < 1_100_000);
    }
}
