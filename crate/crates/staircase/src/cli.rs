//! Implementations behind the `staircase` binary's subcommands.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
//! failures in a requested fit, 1 for anything else (I/O).

use crate::bias::{bias_identity_check, weighted_bias_identity_check};
use crate::dag::{Dag, IndependenceQuery};
use crate::error::{Error, Result};
use crate::estimate::{
    fit_latent_class, fit_logistic, fit_nonparametric, fit_random_intercept, group_by_subject,
    group_pooled, two_stage::fit_two_stage_logistic, EmOptions, FitResult, LatentDataset,
    RandomInterceptOptions, WeightMode,
};
use crate::replicate::EstimatorKind;
use crate::rng::StreamKey;
use crate::sim::{
    read_trials_csv, simulate_dataset, write_trials_csv, Scheme, SubjectData, SufficientCounts,
};
use crate::study::{
    parse_scenario, parse_study, run_study, write_atomic, write_plot_csv, write_summary_csv,
};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// Map an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::Csv { .. }
        | Error::InvalidArgument(_)
        | Error::InvalidWeights(_)
        | Error::UnknownNode(_)
        | Error::OverlappingSets(_)
        | Error::Cyclic => 2,
        Error::Separation(_)
        | Error::RankDeficient
        | Error::Quadrature(_)
        | Error::DegenerateSlope
        | Error::WindowTooSmall { .. }
        | Error::LevelUnsampled(_)
        | Error::TooFewValues { .. } => 3,
        Error::Io(_) => 1,
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::Io)
}

/// `simulate`: generate trial data for the scenario in a config file.
pub fn cmd_simulate(
    config_path: &Path,
    out: &Path,
    seed_override: Option<u64>,
    oracle_alpha: bool,
) -> Result<()> {
    let mut scenario = parse_scenario(&read_to_string(config_path)?)?;
    if let Some(seed) = seed_override {
        scenario.config.seed = seed;
    }
    // Replication 0 of the scenario stream, so `simulate` agrees with the
    // first replication of every replicated run of the same config.
    let key = StreamKey::new(scenario.config.seed).child(0);
    let data = simulate_dataset(&scenario.config, key);
    let mut bytes = Vec::new();
    write_trials_csv(&mut bytes, &data, oracle_alpha)?;
    write_atomic(out, &bytes)?;
    Ok(())
}

fn write_fit_csv<W: Write>(out: &mut W, estimator: &str, fit: &FitResult) -> Result<()> {
    writeln!(out, "estimator,param,estimate,se,converged,loglik,iterations")?;
    for ((param, estimate), &se) in fit.estimates().zip(fit.se_values()) {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            estimator,
            param,
            fmt(estimate),
            fmt(se),
            fit.converged,
            fmt(fit.loglik),
            fit.iterations
        )?;
    }
    Ok(())
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn max_level(data: &[SubjectData]) -> usize {
    data.iter()
        .flat_map(|s| s.records.iter().map(|r| r.level))
        .max()
        .unwrap_or(0)
}

/// `fit`: run one estimator on a trial CSV.
pub fn cmd_fit(
    input: &Path,
    estimator: &str,
    weight_mode: Option<&str>,
    weight_paths: usize,
    levels_override: Option<usize>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let file = std::fs::File::open(input)?;
    let data = read_trials_csv(std::io::BufReader::new(file))?;
    if data.is_empty() {
        return Err(Error::invalid("input has no trials"));
    }
    let kind = EstimatorKind::from_str(estimator)?;
    let levels = levels_override.unwrap_or_else(|| max_level(&data));

    let mut bytes = Vec::new();
    match kind {
        EstimatorKind::Nonparametric => {
            let counts = SufficientCounts::from_dataset(&data, levels);
            let estimates = fit_nonparametric(&counts.pooled);
            writeln!(&mut bytes, "estimator,param,estimate,se,converged,loglik,iterations")?;
            for e in estimates {
                writeln!(
                    &mut bytes,
                    "nonparametric,prob_{},{},{},{},NaN,0",
                    e.level,
                    fmt(e.estimate.unwrap_or(f64::NAN)),
                    fmt(e.standard_error().unwrap_or(f64::NAN)),
                    e.estimate.is_some(),
                )?;
            }
        }
        EstimatorKind::Logistic => {
            let fit = fit_logistic(&group_pooled(&data))?;
            write_fit_csv(&mut bytes, "logistic", &fit)?;
        }
        EstimatorKind::RandomIntercept => {
            let fit = fit_random_intercept(&group_by_subject(&data), &RandomInterceptOptions::default())?;
            write_fit_csv(&mut bytes, "random-intercept", &fit)?;
        }
        EstimatorKind::LatentClassEm { .. } => {
            let mode = match weight_mode.unwrap_or("exact-fd") {
                "exact-fd" => WeightMode::ExactFixed,
                "ud-simulated" => WeightMode::UpDownSimulated { paths: weight_paths },
                "naive" => WeightMode::Naive,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown weight mode `{other}` (expected exact-fd, ud-simulated or naive)"
                    )))
                }
            };
            let dataset = LatentDataset::from_subject_data(&data, levels);
            let opts = EmOptions { weight_mode: mode, key: StreamKey::new(seed), ..Default::default() };
            let fit = fit_latent_class(&dataset, &opts)?;
            write_fit_csv(&mut bytes, "latent-em", &fit.to_fit_result())?;
        }
        EstimatorKind::TwoStage => {
            let out_fit = fit_two_stage_logistic(&data)?;
            write_fit_csv(&mut bytes, "two-stage", &out_fit.fit)?;
        }
    }
    write_atomic(out, &bytes)?;
    Ok(())
}

/// `study`: run a study grid, write summary and plot-data CSVs into a
/// directory.
pub fn cmd_study(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    threads: Option<usize>,
) -> Result<()> {
    let text = read_to_string(config_path)?;
    let mut grid = parse_study(&text)?;
    if let Some(seed) = seed_override {
        crate::study::reseed(&mut grid, seed);
    }
    let rows = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
            pool.install(|| run_study(&grid))?
        }
        None => run_study(&grid)?,
    };
    std::fs::create_dir_all(out_dir)?;
    let mut summary = Vec::new();
    write_summary_csv(&mut summary, &rows)?;
    write_atomic(&out_dir.join("summary.csv"), &summary)?;
    let mut plot = Vec::new();
    write_plot_csv(&mut plot, &rows)?;
    write_atomic(&out_dir.join("plotdata.csv"), &plot)?;
    Ok(())
}

/// `bias-check`: compare both sides of the bias identity at one level.
/// The weighted variant runs automatically for a latent fixed design.
pub fn cmd_bias_check<W: Write>(
    config_path: &Path,
    level: usize,
    replications: Option<usize>,
    seed_override: Option<u64>,
    out: &mut W,
) -> Result<()> {
    let mut scenario = parse_scenario(&read_to_string(config_path)?)?;
    if let Some(seed) = seed_override {
        scenario.config.seed = seed;
    }
    let replications = replications.unwrap_or(scenario.config.replications);
    let weighted = scenario.config.scheme == Scheme::FdR;
    let check = if weighted {
        weighted_bias_identity_check(&scenario.config, level, replications)?
    } else {
        bias_identity_check(&scenario.config, level, replications)?
    };
    writeln!(
        out,
        "scenario {} level {} ({}): lhs={} rhs={} mc_se={} diff={} agree={} R_effective={} mean_total={}",
        scenario.id,
        level,
        if weighted { "weighted" } else { "unweighted" },
        fmt(check.lhs),
        fmt(check.rhs),
        fmt(check.mc_se),
        fmt(check.lhs - check.rhs),
        if check.agrees(3.0) { "yes" } else { "no" },
        check.effective,
        fmt(check.expected_trials),
    )?;
    Ok(())
}

/// `dag-check`: evaluate a conditional-independence query on a scheme graph
/// or a graph file.
pub fn cmd_dag_check<W: Write>(
    scheme: Option<&str>,
    trials: usize,
    graph_file: Option<&Path>,
    query: &str,
    out: &mut W,
) -> Result<()> {
    let dag = match (scheme, graph_file) {
        (Some(name), None) => Dag::scheme_dag(Scheme::from_str(name)?, trials),
        (None, Some(path)) => Dag::parse(&read_to_string(path)?)?,
        _ => return Err(Error::invalid("give exactly one of --scheme or --graph")),
    };
    let parsed = IndependenceQuery::parse(query)?;
    let independent = parsed.evaluate(&dag)?;
    writeln!(out, "{}", if independent { "independent" } else { "dependent" })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::config("x", "y")), 2);
        assert_eq!(exit_code(&Error::Separation("all".into())), 3);
        assert_eq!(exit_code(&Error::RankDeficient), 3);
        assert_eq!(exit_code(&Error::UnknownNode("q".into())), 2);
    }

    #[test]
    fn dag_check_reports_lines() {
        let mut buf = Vec::new();
        cmd_dag_check(Some("UD"), 5, None, "Y3 | Y1,Y2,S1,S2 | S3 ?", &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "independent\n");
        let mut buf = Vec::new();
        cmd_dag_check(Some("UDr"), 5, None, "S3 | alpha", &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "dependent\n");
    }
}
