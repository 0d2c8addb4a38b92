//! Psychometric-function model: logistic curve on an equidistant intensity
//! grid, subject effects, and two-class conditional success probabilities.

use crate::error::{Error, Result};

/// Stimulus level index, `1..=L`.
pub type Level = usize;

/// Success probabilities below this saturate; above `1 - PROB_CEIL_EPS` they
/// saturate from the other side. Keeps log-likelihoods finite without
/// branching in hot loops.
pub const PROB_FLOOR: f64 = 1e-300;
pub const PROB_CEIL_EPS: f64 = 1e-16;

/// The standard logistic function, clamped into `[PROB_FLOOR, 1 - PROB_CEIL_EPS]`.
pub fn logistic(x: f64) -> f64 {
    let p = 1.0 / (1.0 + (-x).exp());
    p.clamp(PROB_FLOOR, 1.0 - PROB_CEIL_EPS)
}

/// Inverse of [`logistic`] on the open unit interval.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Intercept and slope of the psychometric function on the logit scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub intercept: f64,
    pub slope: f64,
}

impl Theta {
    pub fn new(intercept: f64, slope: f64) -> Self {
        Self { intercept, slope }
    }

    /// Success probability at `intensity` for a subject with additive logit
    /// shift `shift`.
    pub fn prob(&self, shift: f64, intensity: f64) -> f64 {
        logistic(self.intercept + shift + self.slope * intensity)
    }

    /// Intensity with 50% success probability, `-intercept/slope`.
    pub fn ed50(&self) -> Result<f64> {
        if self.slope == 0.0 {
            return Err(Error::DegenerateSlope);
        }
        Ok(-self.intercept / self.slope)
    }
}

/// Equidistant stimulus set `{d/L, 2d/L, ..., d}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityGrid {
    max_intensity: f64,
    values: Vec<f64>,
}

impl IntensityGrid {
    pub fn new(max_intensity: f64, levels: usize) -> Result<Self> {
        if !(max_intensity > 0.0) || !max_intensity.is_finite() {
            return Err(Error::invalid("maximum intensity must be positive and finite"));
        }
        if levels == 0 {
            return Err(Error::invalid("level count must be positive"));
        }
        let step = max_intensity / levels as f64;
        let values = (1..=levels).map(|k| k as f64 * step).collect();
        Ok(Self { max_intensity, values })
    }

    pub fn levels(&self) -> usize {
        self.values.len()
    }

    pub fn max_intensity(&self) -> f64 {
        self.max_intensity
    }

    pub fn step(&self) -> f64 {
        self.max_intensity / self.levels() as f64
    }

    /// Intensity value of a 1-based level index.
    pub fn value(&self, level: Level) -> f64 {
        self.values[level - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Distribution of the per-subject additive logit shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectModel {
    /// No between-subject heterogeneity; the shift is exactly zero.
    None,
    /// Gaussian random intercept with mean zero.
    Gaussian { sd: f64 },
    /// Two-point mixture: shift is `offset` with probability `prevalence`,
    /// zero otherwise. `offset` is a known constant, not a parameter.
    Latent { prevalence: f64, offset: f64 },
}

impl EffectModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EffectModel::None => Ok(()),
            EffectModel::Gaussian { sd } => {
                if sd >= 0.0 && sd.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("gaussian effect sd must be nonnegative"))
                }
            }
            EffectModel::Latent { prevalence, offset } => {
                if !(prevalence > 0.0 && prevalence < 1.0) {
                    return Err(Error::invalid("latent prevalence must lie in (0,1)"));
                }
                if !(offset > 0.0) {
                    return Err(Error::invalid("latent class offset must be positive"));
                }
                Ok(())
            }
        }
    }
}

/// A realized subject effect together with the model it was drawn from.
/// Retained on simulated data for oracle checks only; estimators never read it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectEffect {
    pub model: EffectModel,
    pub value: f64,
}

impl SubjectEffect {
    pub fn none() -> Self {
        Self { model: EffectModel::None, value: 0.0 }
    }
}

/// Per-level class-conditional success probabilities for the two-class model,
/// the class-A prevalence, and the (known) logit offset between classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentClassParams {
    /// Success probability per level for the zero-shift class.
    pub baseline: Vec<f64>,
    /// Success probability per level for the shifted class.
    pub elevated: Vec<f64>,
    /// Prevalence of the shifted class.
    pub prevalence: f64,
    /// Logit difference between the classes; a known constant.
    pub offset: f64,
}

impl LatentClassParams {
    pub fn new(baseline: Vec<f64>, elevated: Vec<f64>, prevalence: f64, offset: f64) -> Result<Self> {
        if baseline.len() != elevated.len() {
            return Err(Error::invalid("class probability vectors must have equal length"));
        }
        for p in baseline.iter().chain(elevated.iter()) {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::invalid("class probabilities must lie in (0,1)"));
            }
        }
        if !(prevalence >= 0.0 && prevalence <= 1.0) {
            return Err(Error::invalid("prevalence must lie in [0,1]"));
        }
        Ok(Self { baseline, elevated, prevalence, offset })
    }

    /// Evaluate the psychometric curve at every grid point for both classes:
    /// the baseline class at shift zero and the elevated class at `offset`.
    /// The resulting vectors satisfy `logit(elevated) - logit(baseline) = offset`
    /// levelwise.
    pub fn from_theta(
        theta: &Theta,
        offset: f64,
        prevalence: f64,
        grid: &IntensityGrid,
    ) -> Result<Self> {
        if !(offset > 0.0) {
            return Err(Error::invalid("class offset must be positive"));
        }
        let baseline = grid.values().iter().map(|&s| theta.prob(0.0, s)).collect();
        let elevated = grid.values().iter().map(|&s| theta.prob(offset, s)).collect();
        Self::new(baseline, elevated, prevalence, offset)
    }

    pub fn levels(&self) -> usize {
        self.baseline.len()
    }

    /// Marginal success probability at `level`:
    /// `(1 - prevalence) * baseline + prevalence * elevated`.
    pub fn marginal(&self, level: Level) -> f64 {
        (1.0 - self.prevalence) * self.baseline[level - 1] + self.prevalence * self.elevated[level - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logistic_symmetry_point() {
        assert_eq!(Theta::new(0.0, 1.0).prob(0.0, 0.0), 0.5);
    }

    #[test]
    fn logistic_table_values() {
        // High-precision oracle: 1/(1+exp(-1.85)) evaluated with mpmath.
        let p = Theta::new(0.05, 9.0).prob(0.0, 0.2);
        assert!((p - 0.864127102990905).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn shift_and_intercept_are_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c: f64 = rng.random_range(-3.0..3.0);
            let s: f64 = rng.random_range(-2.0..2.0);
            let lhs = Theta::new(0.0, 1.0).prob(c, s);
            let rhs = Theta::new(c, 1.0).prob(0.0, s);
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn saturation_is_monotone_and_finite() {
        let theta = Theta::new(0.0, 1.0);
        let lo = theta.prob(0.0, -800.0);
        let hi = theta.prob(0.0, 800.0);
        assert!(lo >= PROB_FLOOR && lo < 0.5);
        assert!(hi > 0.5 && hi <= 1.0 - PROB_CEIL_EPS);
        assert!(theta.prob(0.0, -1e6) <= lo);
        assert!(theta.prob(0.0, 1e6) >= hi);
    }

    #[test]
    fn monotone_in_intensity_and_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let theta = Theta::new(rng.random_range(-2.0..2.0), rng.random_range(0.1..8.0));
            let s1: f64 = rng.random_range(-1.0..1.0);
            let s2 = s1 + rng.random_range(0.01..1.0);
            assert!(theta.prob(0.0, s2) > theta.prob(0.0, s1));
            let a1: f64 = rng.random_range(-1.0..1.0);
            let a2 = a1 + rng.random_range(0.01..1.0);
            assert!(theta.prob(a2, s1) > theta.prob(a1, s1));
        }
    }

    #[test]
    fn ed50_examples() {
        assert_eq!(Theta::new(0.0, 1.0).ed50().unwrap(), 0.0);
        let e = Theta::new(0.05, 9.0).ed50().unwrap();
        assert!((e - (-0.05 / 9.0)).abs() < 1e-15);
        assert!((e + 0.005555555555555556).abs() < 1e-12);
        assert_eq!(Theta::new(-2.0, 4.0).ed50().unwrap(), 0.5);
        assert!(Theta::new(1.0, 0.0).ed50().is_err());
    }

    #[test]
    fn curve_is_half_at_ed50() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let theta = Theta::new(rng.random_range(-3.0..3.0), rng.random_range(-6.0..6.0));
            if theta.slope.abs() < 1e-3 {
                continue;
            }
            let e = theta.ed50().unwrap();
            assert!((theta.prob(0.0, e) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_is_equidistant() {
        let grid = IntensityGrid::new(0.2, 10).unwrap();
        assert_eq!(grid.levels(), 10);
        assert!((grid.value(1) - 0.02).abs() < 1e-15);
        assert!((grid.value(10) - 0.2).abs() < 1e-15);
        for w in grid.values().windows(2) {
            assert!((w[1] - w[0] - grid.step()).abs() < 1e-12);
        }
        assert!(IntensityGrid::new(0.0, 10).is_err());
        assert!(IntensityGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn latent_probs_logit_difference() {
        let grid = IntensityGrid::new(0.2, 10).unwrap();
        let theta = Theta::new(0.05, 9.0);
        let offset = 2.0;
        let params = LatentClassParams::from_theta(&theta, offset, 0.4, &grid).unwrap();
        for level in 1..=grid.levels() {
            let diff = logit(params.elevated[level - 1]) - logit(params.baseline[level - 1]);
            assert!((diff - offset).abs() < 1e-10);
        }
    }

    #[test]
    fn latent_probs_example() {
        let grid = IntensityGrid::new(1.0, 1).unwrap();
        // Single grid point at s = 1 with zero slope puts the curve at its intercept.
        let theta = Theta::new(0.0, 0.0);
        let params = LatentClassParams::from_theta(&theta, 3f64.ln(), 0.5, &grid).unwrap();
        assert!((params.baseline[0] - 0.5).abs() < 1e-14);
        assert!((params.elevated[0] - 0.75).abs() < 1e-14);
    }

    #[test]
    fn zero_offset_limit_collapses_classes() {
        let grid = IntensityGrid::new(0.2, 10).unwrap();
        let theta = Theta::new(0.05, 9.0);
        let a = LatentClassParams::from_theta(&theta, 1e-12, 0.3, &grid).unwrap();
        for level in 1..=10 {
            assert!((a.baseline[level - 1] - a.elevated[level - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_is_a_convex_combination() {
        let params = LatentClassParams::new(vec![0.4], vec![0.8], 0.5, 1.0).unwrap();
        assert!((params.marginal(1) - 0.6).abs() < 1e-15);
        let lo = LatentClassParams::new(vec![0.4], vec![0.8], 0.0, 1.0).unwrap();
        assert_eq!(lo.marginal(1), 0.4);
        let hi = LatentClassParams::new(vec![0.4], vec![0.8], 1.0, 1.0).unwrap();
        assert_eq!(hi.marginal(1), 0.8);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p0: f64 = rng.random_range(0.05..0.95);
            let pa: f64 = rng.random_range(0.05..0.95);
            let tau: f64 = rng.random_range(0.0..1.0);
            let params = LatentClassParams::new(vec![p0], vec![pa], tau, 1.0).unwrap();
            let m = params.marginal(1);
            assert!(m >= p0.min(pa) - 1e-15 && m <= p0.max(pa) + 1e-15);
        }
    }
}
