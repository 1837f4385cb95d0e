//! `courtplan`: generate, ingest, train, plan, roll out, evaluate and render.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<courtplan_core::Error> for CliError {
    fn from(e: courtplan_core::Error) -> Self {
        match e {
            courtplan_core::Error::Numeric(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "courtplan", version, about = "Diffusion planning for basketball possessions")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct OutArg {
    /// Output path; defaults to a name under $COURTPLAN_OUT_DIR.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct Models {
    #[arg(long)]
    pub diffusion: PathBuf,
    #[arg(long)]
    pub value: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus in the tracking and play-by-play formats.
    Generate {
        #[command(flatten)]
        out: OutArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        possessions: Option<usize>,
        /// drive, perimeter_pass or mixed.
        #[arg(long)]
        script: Option<String>,
    },
    /// Parse motion/play-by-play pairs and segment possessions.
    Ingest {
        #[arg(long = "motion")]
        motion: Vec<PathBuf>,
        /// One file for all games, or one per --motion file.
        #[arg(long = "pbp")]
        pbp: Vec<PathBuf>,
        /// Directory of `<game>.motion.json` / `<game>.pbp.csv` pairs.
        #[arg(long)]
        raw_dir: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Turn ingested games into a normalized trajectory dataset.
    BuildDataset {
        #[arg(long)]
        games: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Train the noise model.
    TrainDiffusion {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train the return model.
    TrainValue {
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Value-guided sampling from a dataset start state.
    Plan {
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        start: StartArgs,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Plan against a heuristic defense in segments of m frames.
    Rollout {
        #[command(flatten)]
        models: Models,
        #[command(flatten)]
        start: StartArgs,
        /// man_to_man or zone_2_3.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        total_len: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Alpha sweep plus ground-truth and random-walk baselines.
    Evaluate {
        #[command(flatten)]
        models: Models,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated guidance scales.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        starts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Draw a planned or rolled-out trajectory as SVG.
    Render {
        /// Plan or rollout file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Object to emphasize (0 ball, 1-5 offense, 6-10 defense).
        #[arg(long)]
        highlight: Option<usize>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Check that an artifact was produced from the given checkpoints.
    Verify {
        #[arg(long)]
        artifact: PathBuf,
        #[command(flatten)]
        models: Models,
    },
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Args, Debug, Clone)]
pub struct StartArgs {
    /// Dataset whose example supplies the start state.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub example: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
