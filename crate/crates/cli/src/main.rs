use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fairrec_core::experiment::{run_stage, ExperimentConfig, RerankMethod, Stage};
use fairrec_core::Error;

#[derive(Parser)]
#[command(
    name = "fairrec",
    version,
    about = "Exposure-aware recommendation experiments"
)]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-user train/test holdout of the ratings file.
    Split,
    /// Rescale training ratings (percentile or z-score).
    Transform,
    /// Train the base recommender and write long lists.
    Recommend,
    /// Cut long lists down to final lists.
    Rerank {
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Score the final lists.
    Eval,
    /// Run the feedback-loop simulation.
    Simulate,
    /// Evaluate every (lambda, beta) grid point and write a leaderboard.
    Gridsearch,
    /// Split, transform, recommend, rerank and eval in sequence.
    Pipeline,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Top,
    FairmatchItem,
    FairmatchSup,
    Random,
    Reverse,
}

impl From<Method> for RerankMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Top => RerankMethod::Top,
            Method::FairmatchItem => RerankMethod::FairmatchItem,
            Method::FairmatchSup => RerankMethod::FairmatchSup,
            Method::Random => RerankMethod::Random,
            Method::Reverse => RerankMethod::Reverse,
        }
    }
}

fn build_config(cli: &Cli) -> Result<(ExperimentConfig, Stage), Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.paths.out = out.clone();
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    let stage = match &cli.command {
        Command::Split => Stage::Split,
        Command::Transform => Stage::Transform,
        Command::Recommend => Stage::Recommend,
        Command::Rerank {
            method,
            lambda,
            beta,
        } => {
            if let Some(m) = method {
                config.rerank.method = (*m).into();
            }
            if let Some(l) = lambda {
                config.rerank.lambda = *l;
            }
            if let Some(b) = beta {
                config.rerank.beta = *b;
            }
            Stage::Rerank
        }
        Command::Eval => Stage::Eval,
        Command::Simulate => Stage::Simulate,
        Command::Gridsearch => Stage::Gridsearch,
        Command::Pipeline => Stage::Pipeline,
    };
    Ok((config, stage))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = build_config(&cli).and_then(|(config, stage)| {
        config.ratings_path()?;
        log::info!("running {} with seed {}", stage.name(), config.seed);
        run_stage(&config, stage)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("fairrec: {message}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
