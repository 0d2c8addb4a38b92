//! Batch study machinery: the flat key-value scenario config format, study
//! grids spanning schemes and experiment-size setups, replicated runs with
//! per-scenario summaries, and the CSV emitters.

use crate::bias::{summarize, SummaryStats};
use crate::error::{Error, Result};
use crate::model::{EffectModel, IntensityGrid, Theta};
use crate::replicate::{run_replications, EstimateTable, EstimatorKind};
use crate::rng::StreamKey;
use crate::sim::{ScenarioConfig, Scheme};
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// A scenario with its unique id within a study.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedScenario {
    pub id: String,
    pub config: ScenarioConfig,
}

/// A list of scenarios sharing one global seed.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyGrid {
    pub seed: u64,
    pub scenarios: Vec<NamedScenario>,
}

/// The experiment-size table of the simulation study: three subject counts
/// crossed with four trial counts, at fixed psychometric-function parameters.
pub const SETUP_SUBJECTS: [usize; 3] = [25, 50, 100];
pub const SETUP_TRIALS: [usize; 4] = [25, 50, 75, 100];

/// Build one standard setup (1..=12): subjects and trials vary, everything
/// else is fixed at d = 0.2, L = 10, a = 0.05, b = 9, tau = 1.
pub fn table_setup(scheme: Scheme, setup: usize, seed: u64, replications: usize) -> Result<ScenarioConfig> {
    if !(1..=12).contains(&setup) {
        return Err(Error::invalid(format!("setup {setup} outside 1..=12")));
    }
    let subjects = SETUP_SUBJECTS[(setup - 1) / 4];
    let trials = SETUP_TRIALS[(setup - 1) % 4];
    let effect = if scheme.has_random_effect() {
        EffectModel::Gaussian { sd: 1.0 }
    } else {
        EffectModel::None
    };
    Ok(ScenarioConfig {
        scheme,
        effect,
        subjects,
        trials,
        grid: IntensityGrid::new(0.2, 10)?,
        theta: Theta::new(0.05, 9.0),
        replications,
        seed,
    })
}

impl StudyGrid {
    /// The full schemes-by-setups product; 48 scenarios for all four schemes
    /// and setups 1..=12. Scenario seeds are derived from the shared seed.
    pub fn schemes_by_setups(
        schemes: &[Scheme],
        setups: &[usize],
        seed: u64,
        replications: usize,
    ) -> Result<Self> {
        let root = StreamKey::new(seed);
        let mut scenarios = Vec::new();
        for &scheme in schemes {
            for &setup in setups {
                let idx = scenarios.len() as u64;
                let config = table_setup(scheme, setup, root.child(idx).seed_value(), replications)?;
                scenarios.push(NamedScenario { id: format!("{scheme}_setup{setup:02}"), config });
            }
        }
        let grid = Self { seed, scenarios };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.scenarios.iter().enumerate() {
            s.config.validate().map_err(|e| {
                Error::config(format!("scenario `{}`", s.id), e.to_string())
            })?;
            if self.scenarios[..i].iter().any(|t| t.id == s.id) {
                return Err(Error::config(
                    format!("scenario `{}`", s.id),
                    "duplicate scenario id",
                ));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Config text format
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
struct Section {
    header: String,
    location: String,
    entries: HashMap<String, (String, String)>, // key -> (value, location)
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| Error::config(format!("line {lineno}"), "unterminated section header"))?
                .trim()
                .to_string();
            sections.push(Section {
                header,
                location: format!("line {lineno}"),
                entries: HashMap::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("line {lineno}"), "expected `key = value`"));
        };
        let section = sections
            .last_mut()
            .ok_or_else(|| Error::config(format!("line {lineno}"), "entry before any section header"))?;
        let key = key.trim().to_string();
        if section
            .entries
            .insert(key.clone(), (value.trim().to_string(), format!("line {lineno}")))
            .is_some()
        {
            return Err(Error::config(format!("line {lineno}"), format!("duplicate key `{key}`")));
        }
    }
    Ok(sections)
}

fn parse_value<T: std::str::FromStr>(section: &Section, key: &str) -> Result<Option<T>> {
    match section.entries.get(key) {
        None => Ok(None),
        Some((value, location)) => value.parse::<T>().map(Some).map_err(|_| {
            Error::config(location.clone(), format!("cannot parse `{value}` for key `{key}`"))
        }),
    }
}

fn require<T>(value: Option<T>, section: &Section, key: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::config(
            format!("section [{}] at {}", section.header, section.location),
            format!("missing key `{key}`"),
        )
    })
}

fn scenario_from_section(section: &Section, default_replications: usize, default_seed: u64) -> Result<NamedScenario> {
    let id = section
        .header
        .strip_prefix("scenario")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| {
            Error::config(section.location.clone(), "scenario sections are `[scenario <id>]`")
        })?
        .to_string();

    let scheme: Scheme = require(parse_value::<Scheme>(section, "scheme")?, section, "scheme")?;
    let subjects = require(parse_value::<usize>(section, "N")?, section, "N")?;
    let trials = require(parse_value::<usize>(section, "T")?, section, "T")?;
    let max_intensity = require(parse_value::<f64>(section, "d")?, section, "d")?;
    let levels = require(parse_value::<usize>(section, "L")?, section, "L")?;
    let intercept = require(parse_value::<f64>(section, "a")?, section, "a")?;
    let slope = require(parse_value::<f64>(section, "b")?, section, "b")?;
    let tau = parse_value::<f64>(section, "tau")?;
    let offset = parse_value::<f64>(section, "A")?;
    let replications = parse_value::<usize>(section, "R")?.unwrap_or(default_replications);
    let seed = parse_value::<u64>(section, "seed")?.unwrap_or(default_seed);

    let effect_name = section
        .entries
        .get("effect_model")
        .map(|(v, _)| v.as_str())
        .unwrap_or(if scheme.has_random_effect() { "gaussian" } else { "none" });
    let effect = match effect_name {
        "none" => EffectModel::None,
        "gaussian" => EffectModel::Gaussian {
            sd: require(tau, section, "tau")?,
        },
        "latent" => EffectModel::Latent {
            prevalence: require(tau, section, "tau")?,
            offset: require(offset, section, "A")?,
        },
        other => {
            return Err(Error::config(
                format!("section [{}]", section.header),
                format!("unknown effect_model `{other}` (expected none, gaussian or latent)"),
            ))
        }
    };

    let config = ScenarioConfig {
        scheme,
        effect,
        subjects,
        trials,
        grid: IntensityGrid::new(max_intensity, levels)
            .map_err(|e| Error::config(format!("section [{}]", section.header), e.to_string()))?,
        theta: Theta::new(intercept, slope),
        replications,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::config(format!("section [{}]", section.header), e.to_string()))?;
    Ok(NamedScenario { id, config })
}

fn parse_setups_list(text: &str, location: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: usize = lo.trim().parse().map_err(|_| {
                Error::config(location.to_string(), format!("cannot parse setup range `{part}`"))
            })?;
            let hi: usize = hi.trim().parse().map_err(|_| {
                Error::config(location.to_string(), format!("cannot parse setup range `{part}`"))
            })?;
            out.extend(lo..=hi);
        } else {
            out.push(part.parse().map_err(|_| {
                Error::config(location.to_string(), format!("cannot parse setup `{part}`"))
            })?);
        }
    }
    Ok(out)
}

/// Parse a study config. A `[grid]` section may set `seed`, `R`, and a
/// `schemes`/`setups` product that expands into standard scenarios;
/// `[scenario <id>]` sections add or fully specify scenarios. `R` defaults
/// to 1000.
pub fn parse_study(text: &str) -> Result<StudyGrid> {
    let sections = split_sections(text)?;
    let mut seed = 0u64;
    let mut default_replications = 1000usize;
    let mut scenarios: Vec<NamedScenario> = Vec::new();

    if let Some(grid) = sections.iter().find(|s| s.header == "grid") {
        seed = parse_value::<u64>(grid, "seed")?.unwrap_or(0);
        default_replications = parse_value::<usize>(grid, "R")?.unwrap_or(1000);
        let schemes: Option<String> = parse_value(grid, "schemes")?;
        let setups: Option<String> = parse_value(grid, "setups")?;
        if let (Some(schemes), Some(setups)) = (&schemes, &setups) {
            let schemes: Vec<Scheme> = schemes
                .split(',')
                .map(|s| Scheme::from_str(s.trim()))
                .collect::<Result<_>>()
                .map_err(|e| Error::config(grid.location.clone(), e.to_string()))?;
            let setups = parse_setups_list(setups, &grid.location)?;
            let expanded = StudyGrid::schemes_by_setups(&schemes, &setups, seed, default_replications)?;
            scenarios.extend(expanded.scenarios);
        } else if schemes.is_some() != setups.is_some() {
            return Err(Error::config(
                grid.location.clone(),
                "`schemes` and `setups` must be given together",
            ));
        }
    }

    for section in sections.iter().filter(|s| s.header != "grid") {
        if !section.header.starts_with("scenario") {
            return Err(Error::config(
                section.location.clone(),
                format!("unknown section `[{}]`", section.header),
            ));
        }
        let idx = scenarios.len() as u64;
        let derived_seed = StreamKey::new(seed).child(idx).seed_value();
        scenarios.push(scenario_from_section(section, default_replications, derived_seed)?);
    }

    if scenarios.is_empty() {
        return Err(Error::config("config", "no scenarios defined"));
    }
    let grid = StudyGrid { seed, scenarios };
    grid.validate()?;
    Ok(grid)
}

/// Parse a config holding a single scenario (the first one wins).
pub fn parse_scenario(text: &str) -> Result<NamedScenario> {
    let grid = parse_study(text)?;
    Ok(grid.scenarios.into_iter().next().unwrap())
}

/// Replace the shared seed and re-derive every scenario seed from it.
pub fn reseed(grid: &mut StudyGrid, seed: u64) {
    grid.seed = seed;
    let root = StreamKey::new(seed);
    for (idx, scenario) in grid.scenarios.iter_mut().enumerate() {
        scenario.config.seed = root.child(idx as u64).seed_value();
    }
}

// ---------------------------------------------------------------------------
// Study execution and summaries
// ---------------------------------------------------------------------------

/// One summary line: an estimator's bias/precision for one parameter in one
/// scenario.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub scenario_id: String,
    pub scheme: Scheme,
    pub subjects: usize,
    pub trials: usize,
    pub estimator: String,
    pub param: String,
    pub truth: f64,
    pub stats: SummaryStats,
}

/// The true value of a named parameter under a scenario's generating model.
pub fn truth_for(config: &ScenarioConfig, param: &str) -> Option<f64> {
    match param {
        "intercept" => Some(config.theta.intercept),
        "slope" => Some(config.theta.slope),
        "ed50" => config.theta.ed50().ok(),
        "effect_sd" => match config.effect {
            EffectModel::Gaussian { sd } => Some(sd),
            _ => None,
        },
        "prevalence" => match config.effect {
            EffectModel::Latent { prevalence, .. } => Some(prevalence),
            _ => None,
        },
        _ => None,
    }
}

/// Summarize a replication table against the scenario truths. Parameters
/// without a defined truth are skipped; non-converged replications are
/// excluded and reflected in `R_effective`.
pub fn summarize_table(scenario: &NamedScenario, table: &EstimateTable) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    for row in &table.rows {
        let key = (row.estimator.to_string(), row.param.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let mut out = Vec::new();
    for (estimator, param) in order {
        let Some(truth) = truth_for(&scenario.config, &param) else {
            continue;
        };
        let estimates = table.converged_estimates(&estimator, &param);
        let Ok(stats) = summarize(&estimates, truth) else {
            continue;
        };
        out.push(SummaryRow {
            scenario_id: scenario.id.clone(),
            scheme: scenario.config.scheme,
            subjects: scenario.config.subjects,
            trials: scenario.config.trials,
            estimator,
            param,
            truth,
            stats,
        });
    }
    out
}

/// Run every scenario of the grid with its scheme's conventional estimator
/// and summarize. Scenarios and replications run in parallel; row order is by
/// scenario position regardless of completion order.
pub fn run_study(grid: &StudyGrid) -> Result<Vec<SummaryRow>> {
    grid.validate()?;
    let per_scenario: Vec<Vec<SummaryRow>> = grid
        .scenarios
        .par_iter()
        .map(|scenario| {
            let estimators = [EstimatorKind::default_for(scenario.config.scheme)];
            let table = run_replications(&scenario.config, &estimators);
            summarize_table(scenario, &table)
        })
        .collect();
    Ok(per_scenario.into_iter().flatten().collect())
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v}")
    }
}

/// `scenario_id,scheme,estimator,param,truth,absBias,relBias,SE,RMSE,R_effective`
pub fn write_summary_csv<W: Write>(out: &mut W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "scenario_id,scheme,estimator,param,truth,absBias,relBias,SE,RMSE,R_effective")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.scenario_id,
            r.scheme,
            r.estimator,
            r.param,
            fmt_float(r.truth),
            fmt_float(r.stats.abs_bias),
            fmt_float(r.stats.rel_bias.unwrap_or(f64::NAN)),
            fmt_float(r.stats.se),
            fmt_float(r.stats.rmse),
            r.stats.effective,
        )?;
    }
    Ok(())
}

/// Long-format plot data mirroring the study figures: relative bias and RMSE
/// against the trial count, grouped by scheme and subject count.
/// `scheme,N,T,param,measure,value`
pub fn write_plot_csv<W: Write>(out: &mut W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(out, "scheme,N,T,param,measure,value")?;
    for r in rows {
        if let Some(rel) = r.stats.rel_bias {
            writeln!(
                out,
                "{},{},{},{},relBias,{}",
                r.scheme, r.subjects, r.trials, r.param, fmt_float(rel)
            )?;
        }
        writeln!(
            out,
            "{},{},{},{},RMSE,{}",
            r.scheme, r.subjects, r.trials, r.param, fmt_float(r.stats.rmse)
        )?;
    }
    Ok(())
}

/// Write bytes to `path` atomically (temp file in the same directory, then
/// rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
