mod commands;
mod error;
mod reports;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Calibrated ranking experiments: generate data, train, evaluate, compare, and time.
#[derive(Debug, Parser)]
#[command(name = "gpf", version)]
struct Cli {
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (generate) or directory (every other command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Flat `key = value` file; keys are flag names, flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic classification or ranking dataset.
    Generate(GenerateArgs),
    /// Train one variant and write a checkpoint.
    Train(TrainArgs),
    /// Score a dataset with a checkpoint and write calibration reports.
    Evaluate(EvaluateArgs),
    /// Train every variant over several seeds and tabulate mean and stderr.
    Compare(CompareArgs),
    /// Time inference of each variant over repeated scoring passes.
    BenchTime(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    /// Shift: L2 norm of a translation spread evenly over all coordinates.
    #[arg(long)]
    pub shift_translation: Option<f64>,
    /// Shift: seed of a random rotation applied before translating.
    #[arg(long)]
    pub shift_rotation_seed: Option<u64>,
    /// Shift: standard deviation of added Gaussian noise.
    #[arg(long)]
    pub shift_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// classification or ranking.
    #[arg(long)]
    pub kind: Option<String>,
    /// Ranking groups (one positive plus k negatives each).
    #[arg(long)]
    pub groups: Option<usize>,
    /// Classification examples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Negatives per ranking group.
    #[arg(long)]
    pub k: Option<usize>,
    /// Strength of the relevance signal in ranking groups.
    #[arg(long)]
    pub signal: Option<f64>,
    /// Distance between the two classification cluster centres.
    #[arg(long)]
    pub separation: Option<f64>,
    #[command(flatten)]
    pub shift: ShiftArgs,
}

/// Flags mirroring the training configuration fields.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// deterministic, mc_dropout, ensemble, sngp, gpf, or focal_only.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub adam_beta1: Option<String>,
    #[arg(long)]
    pub adam_beta2: Option<String>,
    #[arg(long)]
    pub adam_eps: Option<String>,
    /// Focal-loss focusing parameter.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Number of random Fourier features in the GP head.
    #[arg(long)]
    pub rff_dim: Option<String>,
    /// Momentum of the streaming precision update.
    #[arg(long)]
    pub alpha: Option<String>,
    /// exact or momentum.
    #[arg(long)]
    pub precision_mode: Option<String>,
    /// Spectral-norm cap.
    #[arg(long)]
    pub sn_c: Option<String>,
    #[arg(long)]
    pub dropout_rate: Option<String>,
    #[arg(long)]
    pub hidden_dim: Option<String>,
    #[arg(long)]
    pub depth: Option<String>,
    #[arg(long)]
    pub mc_passes: Option<String>,
    #[arg(long)]
    pub ensemble_size: Option<String>,
    /// mixed or homogeneous.
    #[arg(long)]
    pub ensemble_mode: Option<String>,
    /// Comma-separated seed list (compare).
    #[arg(long)]
    pub seeds: Option<String>,
}

impl TrainFlags {
    pub fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("variant", self.variant.clone()),
            ("epochs", self.epochs.clone()),
            ("batch_size", self.batch_size.clone()),
            ("learning_rate", self.learning_rate.clone()),
            ("optimizer", self.optimizer.clone()),
            ("adam_beta1", self.adam_beta1.clone()),
            ("adam_beta2", self.adam_beta2.clone()),
            ("adam_eps", self.adam_eps.clone()),
            ("gamma", self.gamma.clone()),
            ("rff_dim", self.rff_dim.clone()),
            ("alpha", self.alpha.clone()),
            ("precision_mode", self.precision_mode.clone()),
            ("sn_c", self.sn_c.clone()),
            ("dropout_rate", self.dropout_rate.clone()),
            ("hidden_dim", self.hidden_dim.clone()),
            ("depth", self.depth.clone()),
            ("mc_passes", self.mc_passes.clone()),
            ("ensemble_size", self.ensemble_size.clone()),
            ("ensemble_mode", self.ensemble_mode.clone()),
            ("seeds", self.seeds.clone()),
        ]
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training data in the embedding file format.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluation data in the embedding file format.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of reliability bins.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Train split file; requires --test-data. Omit both to generate data per seed.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub train_groups: Option<usize>,
    #[arg(long)]
    pub test_groups: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub signal: Option<f64>,
    /// Comma-separated variants; all six by default.
    #[arg(long)]
    pub variants: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Worker threads for independent (variant, seed) runs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub shift: ShiftArgs,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Scoring data; generated when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub train_groups: Option<usize>,
    #[arg(long)]
    pub eval_groups: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Comma-separated variants; the first is the reference for ratios.
    #[arg(long)]
    pub variants: Option<String>,
    /// Timed scoring passes per model (at least 3).
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let global = commands::Global {
        seed: cli.seed,
        out: cli.out,
        config: cli.config,
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&global, a),
        Command::Train(a) => commands::train(&global, a),
        Command::Evaluate(a) => commands::evaluate(&global, a),
        Command::Compare(a) => commands::compare(&global, a),
        Command::BenchTime(a) => commands::bench_time(&global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
