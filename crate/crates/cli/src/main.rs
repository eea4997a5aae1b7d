use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rfqi::bench::{self, ExperimentConfig, ExperimentMode, ReplicationSeeds};
use rfqi::mdp::{self, Policy};
use rfqi::{io, rng, Error};

/// Reward-filtered fitted-Q experiments.
#[derive(Parser)]
#[command(name = "rfqi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the replication grid and write results.csv, summary.csv, manifest.json.
    Run(RunArgs),
    /// Recompute summary statistics from a results CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw one metric of a summary CSV as an SVG line chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a trajectory batch (.csv, or binary for .bin/.rfqi).
    Simulate(SimulateArgs),
    /// Print restricted-eigenvalue and beta-min diagnostics as JSON.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    support_size: Option<usize>,
    #[arg(long)]
    sigma_s: Option<f64>,
    #[arg(long)]
    sigma_r: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fqe,
    Fqi,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print per-cell progress on stderr.
    #[arg(long)]
    progress: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of trajectories; defaults to the smallest configured sample size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating spec as JSON.
    #[arg(long)]
    spec_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "behavior")]
    policy: PolicyArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Behavior,
    Uniform,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Defaults to twice the support size.
    #[arg(long)]
    subset_size: Option<usize>,
    #[arg(long, default_value_t = 200)]
    samples: usize,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            config.master_seed = v;
        }
        if let Some(v) = &self.n_list {
            config.sample_sizes = v.clone();
        }
        if let Some(v) = self.reps {
            config.replications = v;
        }
        if let Some(v) = self.d {
            config.d = v;
        }
        if let Some(v) = self.support_size {
            config.support_size = v;
        }
        if let Some(v) = self.sigma_s {
            config.state_noise_sd = v;
        }
        if let Some(v) = self.sigma_r {
            config.reward_noise_sd = v;
        }
        if let Some(v) = self.mode {
            config.mode = match v {
                ModeArg::Fqe => ExperimentMode::Fqe,
                ModeArg::Fqi => ExperimentMode::Fqi,
            };
        }
        config.validate()?;
        Ok(config)
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run(args) => {
            let mut config = args.config.resolve()?;
            if let Some(out) = args.out {
                config.output_dir = out;
            }
            let progress = |done: usize, total: usize| {
                if args.progress {
                    eprintln!("cell {done}/{total}");
                }
            };
            let results = bench::run_experiment_with_progress(&config, &progress)?;
            println!("{}", results.display());
        }
        Command::Summarize { input, out } => bench::summarize(&input, &out)?,
        Command::Plot { input, metric, out } => bench::plot::plot(&input, &metric, &out)?,
        Command::Simulate(args) => {
            let config = args.config.resolve()?;
            let n = args.n.unwrap_or(config.sample_sizes[0]);
            let seeds = ReplicationSeeds::new(config.master_seed, 0, config.redraw_policies);
            let spec = mdp::generate_mdp(&config.mdp_params(), seeds.spec)?;
            let policy = match args.policy {
                PolicyArg::Behavior => Policy::random_logistic(config.d, &mut rng::stream(seeds.behavior, &[])),
                PolicyArg::Uniform => Policy::Uniform,
            };
            let batch = mdp::simulate(&spec, &policy, n, config.initial_sd, seeds.batch(n))?;
            io::save_trajectories(&batch, &args.out)?;
            if let Some(path) = args.spec_out {
                io::save_spec(&spec, &path)?;
            }
        }
        Command::Diagnose(args) => {
            let config = args.config.resolve()?;
            let subset = args.subset_size.unwrap_or(2 * config.support_size);
            let report = bench::diagnose(&config, args.n, subset, args.samples)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn error_line(code: &str, message: &str) -> String {
    serde_json::json!({ "error": code, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("Usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.code(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
