use std::path::PathBuf;

use clap::{ArgAction, ArgGroup, Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "biatt", version, about = "Windowed-attention LSTM speech enhancement")]
pub struct Cli {
    /// More output; repeat for per-epoch detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    /// Only errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus of harmonic "speech" in noise.
    MakeToyData(MakeToyData),
    /// Train a model on the train split of a manifest.
    Train(Train),
    /// Enhance a WAV file or every WAV file in a directory.
    Enhance(Enhance),
    /// Same as `enhance --dump-attention`.
    DumpAttention(Enhance),
    /// Score a checkpoint on a manifest split.
    Evaluate(Evaluate),
    /// Run the built-in numerical checks.
    Selftest,
    /// Train and score one model per (omega, xi) pair.
    Sweep(Sweep),
}

#[derive(Debug, Args)]
pub struct MakeToyData {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// SNR values (dB) to draw from.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub snr: Option<Vec<f64>>,
}

/// Hyperparameters settable from flags or a TOML file.
#[derive(Debug, Default, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    /// Look-back window in frames.
    #[arg(long)]
    pub omega: Option<usize>,
    /// Look-ahead window in frames.
    #[arg(long)]
    pub xi: Option<usize>,
    /// LSTM cell count.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub encoder_out: Option<usize>,
    /// Width of the enhancement vector.
    #[arg(long)]
    pub e_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// sgd or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Multiplier on the SNR learning-rate schedule.
    #[arg(long)]
    pub lr_scale: Option<f64>,
    /// Constant learning rate instead of the SNR schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

impl Hyper {
    /// Fields set in `self` win over those in `other`.
    pub fn or(self, other: Hyper) -> Hyper {
        Hyper {
            omega: self.omega.or(other.omega),
            xi: self.xi.or(other.xi),
            hidden: self.hidden.or(other.hidden),
            encoder_out: self.encoder_out.or(other.encoder_out),
            e_dim: self.e_dim.or(other.e_dim),
            dropout: self.dropout.or(other.dropout),
            epochs: self.epochs.or(other.epochs),
            batch: self.batch.or(other.batch),
            seed: self.seed.or(other.seed),
            optimizer: self.optimizer.or(other.optimizer),
            lr_scale: self.lr_scale.or(other.lr_scale),
            lr: self.lr.or(other.lr),
            patience: self.patience.or(other.patience),
            grad_clip: self.grad_clip.or(other.grad_clip),
        }
    }
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Receives best.ckpt and loss_curve.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file of hyperparameters; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write epoch_NNNN.ckpt after every epoch.
    #[arg(long)]
    pub save_every_epoch: bool,
    #[command(flatten)]
    pub hyper: Hyper,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "input_dir"])))]
pub struct Enhance {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Single noisy WAV.
    #[arg(long, requires = "output", conflicts_with = "input_dir")]
    pub input: Option<PathBuf>,
    #[arg(long, conflicts_with = "output_dir")]
    pub output: Option<PathBuf>,
    /// Directory of noisy WAVs.
    #[arg(long, requires = "output_dir")]
    pub input_dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    pub output_dir: Option<PathBuf>,
    /// Write per-direction attention CSVs next to each output.
    #[arg(long)]
    pub dump_attention: bool,
    /// Write band and per-bin gain CSVs next to each output.
    #[arg(long)]
    pub dump_gains: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Sweep {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,5,15")]
    pub omegas: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,5")]
    pub xis: Vec<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: Hyper,
}
