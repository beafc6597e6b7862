mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

/// Kinematics, hysteresis simulation and learned compensation for a
/// cable-driven continuum manipulator.
#[derive(Debug, Parser)]
#[command(name = "samkit", version)]
pub struct Cli {
    /// TOML configuration file. A missing default file means built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides SAMKIT_SEED and the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: out/<subcommand>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Full-size dataset and training length.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward kinematics of one configuration.
    Fk {
        /// q1..q7, comma separated (mm, degrees).
        #[arg(long, value_delimiter = ',', required = true)]
        q: Vec<f64>,
    },
    /// Inverse kinematics for a target pose.
    Ik(IkArgs),
    /// Cable displacements for a configuration, or joints from displacements.
    Cables {
        #[arg(long, value_delimiter = ',', conflicts_with = "deltas")]
        q: Option<Vec<f64>>,
        /// dm1, dm2, dc3..dc12, comma separated (mm).
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
    },
    /// Workspace volumes by translation.
    Workspace(WorkspaceArgs),
    /// Generate train, validation and test datasets through the plant.
    GenData {
        /// Records per training translation.
        #[arg(long)]
        n_per: Option<usize>,
    },
    /// Plant error statistics against the q3 reference, optionally fitted.
    CalibratePlant {
        #[arg(long)]
        n_per: Option<usize>,
        /// Tune the q3 bias and translation gain before reporting.
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = 60)]
        max_evals: usize,
    },
    /// Train the model ensemble.
    Train(TrainArgs),
    /// Tracking of random trajectories at unseen translations.
    EvaluateTracking {
        #[command(flatten)]
        models: ModelArgs,
        /// Translations (mm); defaults to the configured test set.
        #[arg(long, value_delimiter = ',')]
        q1: Vec<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Box-pointing task with and without compensation.
    EvaluateBox {
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Calibrate a desired trajectory CSV (t,q1..q7).
    Compensate {
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        /// Clamp calibrated commands to the joint limits.
        #[arg(long)]
        clamp: bool,
        /// Also time this many compensate calls.
        #[arg(long)]
        latency_probe: Option<usize>,
    },
    /// Per-step latency of the ensemble.
    Latency {
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
    },
}

#[derive(Debug, Args)]
pub struct IkArgs {
    /// Target pose as a row-major 4x4 matrix (16 values).
    #[arg(long, value_delimiter = ',', required_unless_present = "target_q")]
    pub pose: Option<Vec<f64>>,
    /// Use the pose of this configuration as the target.
    #[arg(long, value_delimiter = ',', conflicts_with = "pose")]
    pub target_q: Option<Vec<f64>>,
    /// Initial guess (default: zero pose).
    #[arg(long, value_delimiter = ',')]
    pub init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Both,
    SemiActive,
    General,
}

#[derive(Debug, Args)]
pub struct WorkspaceArgs {
    #[arg(long, default_value_t = 125.0)]
    pub q1_max: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    /// Translation step between rows (mm).
    #[arg(long, default_value_t = 25.0)]
    pub step: f64,
    #[arg(long)]
    pub voxel: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data; generated in memory if absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub n_models: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model checkpoints forming the ensemble.
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
}

/// Checks the lengths of list-valued flags.
fn check_lists(cli: &Cli) -> Result<(), String> {
    let check = |flag: &str, v: Option<&Vec<f64>>, n: usize| match v {
        Some(v) if v.len() != n => Err(format!(
            "--{flag} takes {n} comma-separated values, got {}",
            v.len()
        )),
        _ => Ok(()),
    };
    match &cli.command {
        Command::Fk { q } => check("q", Some(q), 7),
        Command::Cables { q, deltas } => {
            check("q", q.as_ref(), 7)?;
            check("deltas", deltas.as_ref(), 12)
        }
        Command::Ik(a) => {
            check("pose", a.pose.as_ref(), 16)?;
            check("target-q", a.target_q.as_ref(), 7)?;
            check("init", a.init.as_ref(), 7)
        }
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = check_lists(&cli) {
        Cli::command()
            .error(ErrorKind::WrongNumberOfValues, msg)
            .exit();
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
