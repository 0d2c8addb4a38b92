use clap::{Parser, Subcommand};
use staircase::cli;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "staircase", version, about = "Simulate and estimate psychometric experiments under fixed and up-down designs")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trial data from a scenario config and write a trial CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Append the realized subject effects as an `alpha` column.
        #[arg(long)]
        oracle_alpha: bool,
    },
    /// Fit an estimator to a trial CSV and write a fit CSV.
    Fit {
        /// Trial CSV produced by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// nonparametric | logistic | random-intercept | latent-em | two-stage
        #[arg(long)]
        estimator: String,
        /// Posterior-weight mode for latent-em: exact-fd | ud-simulated | naive.
        #[arg(long)]
        weight_mode: Option<String>,
        /// Forward paths per class for the simulated weight ratio.
        #[arg(long, default_value_t = 1000)]
        weight_paths: usize,
        /// Level count when the data does not cover the full grid.
        #[arg(long)]
        levels: Option<usize>,
        /// Seed for the simulated weight ratio.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a study grid and write summary.csv and plotdata.csv.
    Study {
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the shared grid seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare both sides of the small-sample bias identity at one level.
    BiasCheck {
        #[arg(long)]
        config: PathBuf,
        /// Grid level to check (1-based).
        #[arg(long)]
        level: usize,
        /// Monte Carlo replications (default: the scenario's R).
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a conditional-independence query on a scheme DAG or graph file.
    DagCheck {
        /// FD | FDr | UD | UDr
        #[arg(long, conflicts_with = "graph")]
        scheme: Option<String>,
        /// Time horizon for a scheme graph.
        #[arg(long, visible_alias = "T", default_value_t = 5)]
        trials: usize,
        /// Graph file with `parent -> child` lines.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Query `A | B | C` with comma-separated node lists.
        query: String,
    },
}

fn run() -> staircase::Result<()> {
    let args = Args::parse();
    match args.command {
        Command::Simulate { config, out, seed, oracle_alpha } => {
            cli::cmd_simulate(&config, &out, seed, oracle_alpha)
        }
        Command::Fit { input, estimator, weight_mode, weight_paths, levels, seed, out } => {
            cli::cmd_fit(&input, &estimator, weight_mode.as_deref(), weight_paths, levels, seed, &out)
        }
        Command::Study { config, out, seed, threads } => cli::cmd_study(&config, &out, seed, threads),
        Command::BiasCheck { config, level, replications, seed } => {
            cli::cmd_bias_check(&config, level, replications, seed, &mut std::io::stdout())
        }
        Command::DagCheck { scheme, trials, graph, query } => {
            cli::cmd_dag_check(scheme.as_deref(), trials, graph.as_deref(), &query, &mut std::io::stdout())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(cli::exit_code(&err) as u8)
        }
    }
}
