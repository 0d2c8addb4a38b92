//! Trial-sequence simulation for the four allocation/dependence schemes and
//! the sufficient statistics that all estimators consume.

use crate::design::{updown_next, FixedDesign};
use crate::error::{Error, Result};
use crate::model::{EffectModel, IntensityGrid, Level, SubjectEffect, Theta};
use crate::rng::StreamKey;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

/// Allocation/dependence scheme of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Fixed design, within-subject independence.
    Fd,
    /// Fixed design with a subject random effect.
    FdR,
    /// Up-down design, within-subject independence.
    Ud,
    /// Up-down design with a subject random effect.
    UdR,
}

impl Scheme {
    pub fn is_adaptive(self) -> bool {
        matches!(self, Scheme::Ud | Scheme::UdR)
    }

    pub fn has_random_effect(self) -> bool {
        matches!(self, Scheme::FdR | Scheme::UdR)
    }

    pub const ALL: [Scheme; 4] = [Scheme::Fd, Scheme::FdR, Scheme::Ud, Scheme::UdR];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::Fd => "FD",
            Scheme::FdR => "FDr",
            Scheme::Ud => "UD",
            Scheme::UdR => "UDr",
        };
        f.write_str(s)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "FD" => Ok(Scheme::Fd),
            "FDr" => Ok(Scheme::FdR),
            "UD" => Ok(Scheme::Ud),
            "UDr" => Ok(Scheme::UdR),
            other => Err(Error::invalid(format!(
                "unknown scheme `{other}` (expected FD, FDr, UD or UDr)"
            ))),
        }
    }
}

/// One trial: which intensity was shown and whether the response was correct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub subject: usize,
    pub trial: usize,
    pub level: Level,
    pub intensity: f64,
    pub response: u8,
}

/// All trials of one subject in presentation order, plus the realized subject
/// effect. The effect is retained for oracle checks only; estimators must not
/// read it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub subject: usize,
    pub records: Vec<TrialRecord>,
    pub effect: SubjectEffect,
}

impl SubjectData {
    pub fn level_sequence(&self) -> Vec<Level> {
        self.records.iter().map(|r| r.level).collect()
    }

    pub fn responses(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.response).collect()
    }
}

/// One simulation scenario: a scheme, an effect model, the experiment size
/// and psychometric-function parameters, and the Monte Carlo bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scheme: Scheme,
    pub effect: EffectModel,
    /// Number of subjects (N).
    pub subjects: usize,
    /// Trials per subject (T).
    pub trials: usize,
    pub grid: IntensityGrid,
    pub theta: Theta,
    /// Monte Carlo replications (R).
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.effect.validate()?;
        let consistent = match self.scheme {
            Scheme::Fd | Scheme::Ud => matches!(self.effect, EffectModel::None),
            Scheme::FdR | Scheme::UdR => !matches!(self.effect, EffectModel::None),
        };
        if !consistent {
            return Err(Error::invalid(format!(
                "scheme {} is inconsistent with effect model {:?}",
                self.scheme, self.effect
            )));
        }
        if self.subjects == 0 && self.trials > 0 {
            // An empty dataset is permitted; only nonsense sizes are rejected.
        }
        if self.trials == 0 && self.subjects > 0 {
            return Err(Error::invalid("trials per subject must be positive"));
        }
        Ok(())
    }

    /// The true class-conditional probabilities implied by a latent effect
    /// model, for oracle computations.
    pub fn latent_truth(&self) -> Result<crate::model::LatentClassParams> {
        match self.effect {
            EffectModel::Latent { prevalence, offset } => {
                crate::model::LatentClassParams::from_theta(&self.theta, offset, prevalence, &self.grid)
            }
            _ => Err(Error::invalid("scenario has no latent effect model")),
        }
    }
}

// Child-stream indices under a per-subject key.
const EFFECT_STREAM: u64 = 0;
const ALLOC_STREAM: u64 = 1;
const RESPONSE_STREAM: u64 = 2;

fn draw_effect(model: EffectModel, key: StreamKey) -> SubjectEffect {
    let mut rng = key.child(EFFECT_STREAM).rng();
    let value = match model {
        EffectModel::None => 0.0,
        EffectModel::Gaussian { sd } => {
            if sd == 0.0 {
                0.0
            } else {
                Normal::new(0.0, sd).expect("validated sd").sample(&mut rng)
            }
        }
        EffectModel::Latent { prevalence, offset } => {
            if rng.random::<f64>() < prevalence {
                offset
            } else {
                0.0
            }
        }
    };
    SubjectEffect { model, value }
}

/// Simulate one subject. The initial intensity is uniform on the grid for
/// every scheme; subsequent intensities follow the scheme's design. Response
/// draws use a dedicated stream consumed once per trial, so two schemes run
/// from the same key see common random numbers.
pub fn simulate_subject(
    config: &ScenarioConfig,
    subject: usize,
    effect: SubjectEffect,
    key: StreamKey,
) -> SubjectData {
    let levels = config.grid.levels();
    let design = FixedDesign::uniform(levels);
    let mut alloc_rng = key.child(ALLOC_STREAM).rng();
    let mut resp_rng = key.child(RESPONSE_STREAM).rng();

    let mut records = Vec::with_capacity(config.trials);
    let mut level: Level = alloc_rng.random_range(1..=levels);
    let mut prev_correct = false;
    for t in 1..=config.trials {
        if t > 1 {
            level = if config.scheme.is_adaptive() {
                updown_next(level, prev_correct, levels)
            } else {
                design.sample(&mut alloc_rng)
            };
        }
        let intensity = config.grid.value(level);
        let p = config.theta.prob(effect.value, intensity);
        let correct = resp_rng.random::<f64>() < p;
        prev_correct = correct;
        records.push(TrialRecord {
            subject,
            trial: t,
            level,
            intensity,
            response: correct as u8,
        });
    }
    SubjectData { subject, records, effect }
}

/// Simulate `config.subjects` independent subjects from the given stream key.
pub fn simulate_dataset(config: &ScenarioConfig, key: StreamKey) -> Vec<SubjectData> {
    (0..config.subjects)
        .map(|i| {
            let subject_key = key.child(i as u64);
            let effect = draw_effect(config.effect, subject_key);
            simulate_subject(config, i + 1, effect, subject_key)
        })
        .collect()
}

/// True if the level sequence is exactly what the up-down rule produces from
/// the first level and the responses.
pub fn updown_consistent(data: &SubjectData, levels: usize) -> bool {
    let mut expected = match data.records.first() {
        Some(r) => r.level,
        None => return true,
    };
    for (t, record) in data.records.iter().enumerate() {
        if record.level != expected {
            return false;
        }
        if t + 1 < data.records.len() {
            expected = updown_next(record.level, record.response == 1, levels);
        }
    }
    true
}

/// Trial and success counts per level.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelCounts {
    pub trials: Vec<u64>,
    pub correct: Vec<u64>,
}

impl LevelCounts {
    pub fn new(levels: usize) -> Self {
        Self { trials: vec![0; levels], correct: vec![0; levels] }
    }

    pub fn add(&mut self, level: Level, response: u8) {
        self.trials[level - 1] += 1;
        self.correct[level - 1] += response as u64;
    }

    pub fn levels(&self) -> usize {
        self.trials.len()
    }

    pub fn total_trials(&self) -> u64 {
        self.trials.iter().sum()
    }
}

/// Per-subject and pooled sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientCounts {
    pub per_subject: Vec<LevelCounts>,
    pub pooled: LevelCounts,
}

impl SufficientCounts {
    pub fn from_dataset(data: &[SubjectData], levels: usize) -> Self {
        let mut pooled = LevelCounts::new(levels);
        let per_subject = data
            .iter()
            .map(|subject| {
                let mut counts = LevelCounts::new(levels);
                for r in &subject.records {
                    counts.add(r.level, r.response);
                    pooled.add(r.level, r.response);
                }
                counts
            })
            .collect();
        Self { per_subject, pooled }
    }

    pub fn levels(&self) -> usize {
        self.pooled.levels()
    }
}

/// Write trial data as CSV. With `include_effect`, an `alpha` column holding
/// the realized subject effect is appended; this is oracle output and not
/// part of any estimator interface.
pub fn write_trials_csv<W: Write>(
    out: &mut W,
    data: &[SubjectData],
    include_effect: bool,
) -> Result<()> {
    if include_effect {
        writeln!(out, "subject,t,level,intensity,response,alpha")?;
    } else {
        writeln!(out, "subject,t,level,intensity,response")?;
    }
    for subject in data {
        for r in &subject.records {
            if include_effect {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.subject, r.trial, r.level, r.intensity, r.response, subject.effect.value
                )?;
            } else {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.subject, r.trial, r.level, r.intensity, r.response
                )?;
            }
        }
    }
    Ok(())
}

/// Read trial data written by [`write_trials_csv`]. Rows must be grouped by
/// subject and ordered by trial within each subject.
pub fn read_trials_csv<R: BufRead>(input: R) -> Result<Vec<SubjectData>> {
    let mut lines = input.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::Csv { line: 1, message: "empty file".into() }),
    };
    let with_alpha = match header.trim_end() {
        "subject,t,level,intensity,response" => false,
        "subject,t,level,intensity,response,alpha" => true,
        other => {
            return Err(Error::Csv {
                line: 1,
                message: format!("unexpected header `{other}`"),
            })
        }
    };

    let mut subjects: Vec<SubjectData> = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        let expect = if with_alpha { 6 } else { 5 };
        if fields.len() != expect {
            return Err(Error::Csv {
                line: lineno,
                message: format!("expected {expect} fields, got {}", fields.len()),
            });
        }
        let parse_err = |field: &str, what: &str| Error::Csv {
            line: lineno,
            message: format!("cannot parse {what} from `{field}`"),
        };
        let subject: usize = fields[0].parse().map_err(|_| parse_err(fields[0], "subject"))?;
        let trial: usize = fields[1].parse().map_err(|_| parse_err(fields[1], "t"))?;
        let level: Level = fields[2].parse().map_err(|_| parse_err(fields[2], "level"))?;
        let intensity: f64 = fields[3].parse().map_err(|_| parse_err(fields[3], "intensity"))?;
        let response: u8 = fields[4].parse().map_err(|_| parse_err(fields[4], "response"))?;
        if response > 1 {
            return Err(Error::Csv { line: lineno, message: "response must be 0 or 1".into() });
        }
        if level == 0 {
            return Err(Error::Csv { line: lineno, message: "level must be >= 1".into() });
        }
        let alpha = if with_alpha {
            fields[5].parse().map_err(|_| parse_err(fields[5], "alpha"))?
        } else {
            0.0
        };

        let need_new = subjects.last().map(|s| s.subject != subject).unwrap_or(true);
        if need_new {
            if subjects.iter().any(|s| s.subject == subject) {
                return Err(Error::Csv {
                    line: lineno,
                    message: format!("subject {subject} appears in non-contiguous blocks"),
                });
            }
            subjects.push(SubjectData {
                subject,
                records: Vec::new(),
                effect: SubjectEffect { model: EffectModel::None, value: alpha },
            });
        }
        let current = subjects.last_mut().unwrap();
        if current.records.len() + 1 != trial {
            return Err(Error::Csv {
                line: lineno,
                message: format!("trial index {trial} out of order for subject {subject}"),
            });
        }
        current.records.push(TrialRecord { subject, trial, level, intensity, response });
    }
    Ok(subjects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EffectModel;

    fn config(scheme: Scheme, effect: EffectModel, subjects: usize, trials: usize) -> ScenarioConfig {
        ScenarioConfig {
            scheme,
            effect,
            subjects,
            trials,
            grid: IntensityGrid::new(0.2, 10).unwrap(),
            theta: Theta::new(0.05, 9.0),
            replications: 1,
            seed: 2024,
        }
    }

    #[test]
    fn scheme_effect_consistency() {
        assert!(config(Scheme::Ud, EffectModel::None, 2, 2).validate().is_ok());
        assert!(config(Scheme::Ud, EffectModel::Gaussian { sd: 1.0 }, 2, 2).validate().is_err());
        assert!(config(Scheme::FdR, EffectModel::None, 2, 2).validate().is_err());
        assert!(config(Scheme::FdR, EffectModel::Gaussian { sd: 1.0 }, 2, 2).validate().is_ok());
        assert!(config(Scheme::UdR, EffectModel::Latent { prevalence: 0.4, offset: 2.0 }, 2, 2)
            .validate()
            .is_ok());
    }

    #[test]
    fn empty_dataset() {
        let cfg = config(Scheme::Fd, EffectModel::None, 0, 5);
        assert!(simulate_dataset(&cfg, StreamKey::new(1)).is_empty());
    }

    #[test]
    fn updown_levels_reconstruct_from_responses() {
        let cfg = config(Scheme::Ud, EffectModel::None, 50, 40);
        let data = simulate_dataset(&cfg, StreamKey::new(5));
        for subject in &data {
            assert!(updown_consistent(subject, cfg.grid.levels()));
            assert_eq!(subject.records.len(), cfg.trials);
            for r in &subject.records {
                assert_eq!(r.intensity, cfg.grid.value(r.level));
            }
        }
    }

    #[test]
    fn gaussian_zero_sd_gives_zero_effects() {
        let cfg = config(Scheme::FdR, EffectModel::Gaussian { sd: 0.0 }, 20, 5);
        for subject in simulate_dataset(&cfg, StreamKey::new(6)) {
            assert_eq!(subject.effect.value, 0.0);
        }
    }

    #[test]
    fn latent_class_fraction() {
        let cfg = config(Scheme::FdR, EffectModel::Latent { prevalence: 0.5, offset: 2.0 }, 10_000, 1);
        let data = simulate_dataset(&cfg, StreamKey::new(7));
        let frac = data.iter().filter(|s| s.effect.value > 0.0).count() as f64 / data.len() as f64;
        assert!((frac - 0.5).abs() < 0.015, "class fraction {frac}");
        for s in &data {
            assert!(s.effect.value == 0.0 || s.effect.value == 2.0);
        }
    }

    #[test]
    fn fd_level_marginal_is_uniform() {
        let cfg = config(Scheme::Fd, EffectModel::None, 10_000, 10);
        let data = simulate_dataset(&cfg, StreamKey::new(8));
        let counts = SufficientCounts::from_dataset(&data, cfg.grid.levels());
        let total = counts.pooled.total_trials() as f64;
        for s in 0..cfg.grid.levels() {
            let freq = counts.pooled.trials[s] as f64 / total;
            assert!((freq - 0.1).abs() < 0.01, "level {s} freq {freq}");
        }
    }

    #[test]
    fn pooled_counts_bounds() {
        let cfg = config(Scheme::Ud, EffectModel::None, 30, 20);
        let data = simulate_dataset(&cfg, StreamKey::new(9));
        let counts = SufficientCounts::from_dataset(&data, cfg.grid.levels());
        let trials: u64 = counts.pooled.trials.iter().sum();
        let correct: u64 = counts.pooled.correct.iter().sum();
        assert_eq!(trials, (cfg.subjects * cfg.trials) as u64);
        assert!(correct <= trials);
        for subject_counts in &counts.per_subject {
            assert_eq!(subject_counts.total_trials(), cfg.trials as u64);
        }
    }

    #[test]
    fn steep_curve_oscillates_at_threshold() {
        // With a near-step psychometric function whose threshold sits mid-grid,
        // the walk must stay within one level of the threshold after first
        // reaching it.
        let mut cfg = config(Scheme::Ud, EffectModel::None, 20, 60);
        cfg.theta = Theta::new(-1100.0, 1e4); // threshold at s = 0.11, mid-grid
        let data = simulate_dataset(&cfg, StreamKey::new(10));
        for subject in data {
            let levels = subject.level_sequence();
            // threshold between levels 5 (0.10) and 6 (0.12)
            if let Some(first) = levels.iter().position(|&l| (5..=6).contains(&l)) {
                for &l in &levels[first..] {
                    assert!((5..=6).contains(&l), "level {l} escaped the threshold band");
                }
            }
        }
    }

    #[test]
    fn fd_future_levels_independent_of_responses() {
        // Permutation check: correlation between the response at t and the
        // level at t+1 is null under FD; strongly negative under UD.
        fn lagged_corr(data: &[SubjectData]) -> f64 {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for s in data {
                for w in s.records.windows(2) {
                    xs.push(w[0].response as f64);
                    ys.push(w[1].level as f64);
                }
            }
            corr(&xs, &ys)
        }
        fn corr(xs: &[f64], ys: &[f64]) -> f64 {
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let mut sxy = 0.0;
            let mut sxx = 0.0;
            let mut syy = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                sxy += (x - mx) * (y - my);
                sxx += (x - mx) * (x - mx);
                syy += (y - my) * (y - my);
            }
            sxy / (sxx * syy).sqrt()
        }

        let n_pairs_per_subject = 9;
        let subjects = 10_000 / n_pairs_per_subject;
        let fd = simulate_dataset(&config(Scheme::Fd, EffectModel::None, subjects, 10), StreamKey::new(11));
        let ud = simulate_dataset(&config(Scheme::Ud, EffectModel::None, subjects, 10), StreamKey::new(11));
        let n = (subjects * n_pairs_per_subject) as f64;
        // corr is asymptotically N(0, 1/n) under independence
        let fd_corr = lagged_corr(&fd);
        let ud_corr = lagged_corr(&ud);
        assert!(fd_corr.abs() < 4.0 / n.sqrt(), "FD lagged corr {fd_corr}");
        assert!(ud_corr < -10.0 / n.sqrt(), "UD lagged corr {ud_corr} not negative");
    }

    #[test]
    fn csv_round_trip() {
        let cfg = config(Scheme::Ud, EffectModel::None, 5, 7);
        let data = simulate_dataset(&cfg, StreamKey::new(12));
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &data, false).unwrap();
        let back = read_trials_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), data.len());
        for (a, b) in back.iter().zip(&data) {
            assert_eq!(a.records, b.records);
        }

        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &data, true).unwrap();
        let back = read_trials_csv(&buf[..]).unwrap();
        for (a, b) in back.iter().zip(&data) {
            assert_eq!(a.effect.value, b.effect.value);
        }
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        let text = "subject,t,level,intensity,response\n1,1,3,0.06,2\n";
        assert!(read_trials_csv(text.as_bytes()).is_err());
        let text = "subject,t,level,intensity,response\n1,2,3,0.06,1\n";
        assert!(read_trials_csv(text.as_bytes()).is_err());
        let text = "nope\n";
        assert!(read_trials_csv(text.as_bytes()).is_err());
    }
}
