use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use freqkd::analysis::AblationSuite;
use freqkd::data::{Modality, SplitName, SyntheticConfig};
use freqkd::losses::BandLossKind;
use freqkd::train::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "freqkd",
    version,
    about = "Frequency-decoupled cross-modal knowledge distillation",
    args_override_self = true
)]
pub struct Cli {
    /// `key = value` file whose keys mirror the long flags; command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic paired-modality dataset
    GenData {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a unimodal encoder and head with cross-entropy only
    TrainUni {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill a frozen teacher checkpoint into a student of the other modality
    Distill {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Teacher checkpoint written by train-uni
        #[arg(long, value_name = "CKPT")]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy of a checkpoint's private head on one split
    Eval {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-modal band similarity and per-dimension mean profiles
    Analyze {
        #[command(flatten)]
        source: SourceArgs,
        /// Encoder for modality a; without both checkpoints the raw inputs are analysed
        #[arg(long, value_name = "CKPT", requires = "checkpoint_b")]
        checkpoint_a: Option<PathBuf>,
        #[arg(long, value_name = "CKPT", requires = "checkpoint_a")]
        checkpoint_b: Option<PathBuf>,
        #[arg(long, default_value = "1/2", value_parser = fraction)]
        threshold: f64,
        #[arg(long, default_value = "train")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation grid over several seeds and both transfer directions
    Ablate {
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// components, loss_grid, threshold, lambda or all
        #[arg(long, default_value = "components")]
        suite: SuiteArg,
        /// Comma-separated seeds or a half-open range `a..b`
        #[arg(long, default_value = "0,1,2", value_parser = seed_list)]
        seeds: SeedList,
        /// Worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a checkpoint's features and logits for one split as CSV
    ExportFeatures {
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Dataset directory (train.csv, test.csv, optional dataset.cfg); generated from the generator flags when absent
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Seed for data generation, initialisation and shuffling
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input dimension per modality
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub semantic_dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub train_size: usize,
    #[arg(long, default_value_t = 500)]
    pub test_size: usize,
    #[arg(long, default_value_t = 4.0)]
    pub semantic_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    pub low_perturbation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub low_noise: f64,
    #[arg(long, default_value_t = 0.2)]
    pub high_signal: f64,
    #[arg(long, default_value_t = 0.3)]
    pub high_noise: f64,
    #[arg(long, default_value_t = 1.6, allow_negative_numbers = true)]
    pub scale_a: f64,
    #[arg(long, default_value_t = 0.4, allow_negative_numbers = true)]
    pub offset_a: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub scale_b: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub offset_b: f64,
    /// Band threshold the generator uses to place shared and specific content
    #[arg(long, default_value = "1/2", value_parser = fraction)]
    pub gen_threshold: f64,
}

impl SynthArgs {
    pub fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            classes: self.classes,
            input_dim: self.dim,
            semantic_dim: self.semantic_dim,
            train_size: self.train_size,
            test_size: self.test_size,
            semantic_noise: self.semantic_noise,
            low_perturbation: self.low_perturbation,
            low_noise: self.low_noise,
            high_signal: self.high_signal,
            high_noise: self.high_noise,
            scale_a: self.scale_a,
            offset_a: self.offset_a,
            scale_b: self.scale_b,
            offset_b: self.offset_b,
            threshold: self.gen_threshold,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Batch size
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Base learning rate
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Exponent of the poly learning-rate decay
    #[arg(long, default_value_t = 0.9)]
    pub poly_power: f64,
    /// Weight of the low-band loss
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    /// Weight of the high-band loss
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    /// Fraction of spectrum bins counted as low frequency, e.g. 0.5 or 1/3
    #[arg(long, default_value = "1/2", value_parser = fraction)]
    pub threshold: f64,
    /// Disable frequency decomposition (band losses act on raw features)
    #[arg(long)]
    pub no_freq: bool,
    /// Disable the shared-classifier alignment loss
    #[arg(long)]
    pub no_align: bool,
    /// Disable feature standardization
    #[arg(long)]
    pub no_scale: bool,
    /// Use MSE instead of logMSE for the high band
    #[arg(long)]
    pub no_log: bool,
    /// Student modality, a or b [default: a for train-uni, the teacher's other modality for distill]
    #[arg(long, alias = "modality")]
    pub student_modality: Option<Modality>,
    #[arg(long, default_value = "mse")]
    pub low_loss: BandLossKind,
    /// mse, logmse or auto (logmse unless --no-log)
    #[arg(long, default_value = "auto", value_parser = high_loss)]
    pub high_loss: HighLoss,
    /// Feed standardized bands to the shared classifiers
    #[arg(long)]
    pub align_standardized: bool,
    /// Count the student's band cross-entropy once when alignment is on
    #[arg(long)]
    pub dedup_student_band_ce: bool,
    /// Hidden layer widths, comma-separated
    #[arg(long, default_value = "128,128")]
    pub hidden: String,
    /// Encoder output (feature) dimension
    #[arg(long, default_value_t = 64)]
    pub feature_dim: usize,
    /// Drop the encoder's input-to-output skip connection
    #[arg(long)]
    pub no_residual: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct HighLoss(pub Option<BandLossKind>);

impl TrainArgs {
    pub fn config(&self, seed: u64, student: Modality) -> freqkd::Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            student_modality: student,
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            momentum: self.momentum,
            poly_power: self.poly_power,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            threshold: self.threshold,
            freq: !self.no_freq,
            align: !self.no_align,
            scale: !self.no_scale,
            log: !self.no_log,
            low_loss: self.low_loss,
            high_loss: self.high_loss.0,
            align_standardized: self.align_standardized,
            dedup_student_band_ce: self.dedup_student_band_ce,
            hidden: freqkd::train::parse_widths(&self.hidden)?,
            feature_dim: self.feature_dim,
            residual: !self.no_residual,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteArg {
    One(AblationSuite),
    All,
}

impl std::str::FromStr for SuiteArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            Ok(Self::All)
        } else {
            s.parse().map(Self::One)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn seed_list(s: &str) -> Result<SeedList, String> {
    let bad = |_| format!("invalid seed list `{s}`");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(bad)?,
            b.trim().parse().map_err(bad)?,
        );
        if a >= b {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(SeedList((a..b).collect()));
    }
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(bad))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SeedList(seeds))
}

/// Accepts a decimal number or a fraction `p/q`.
pub fn fraction(s: &str) -> Result<f64, String> {
    let v = match s.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| format!("invalid fraction `{s}`"))?;
            let q: f64 = q
                .trim()
                .parse()
                .map_err(|_| format!("invalid fraction `{s}`"))?;
            p / q
        }
        None => s
            .trim()
            .parse()
            .map_err(|_| format!("invalid number `{s}`"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not a finite number"))
    }
}

fn high_loss(s: &str) -> Result<HighLoss, String> {
    match s {
        "auto" => Ok(HighLoss(None)),
        other => other.parse().map(|k| HighLoss(Some(k))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_library_defaults() {
        let cli = Cli::try_parse_from(["freqkd", "train-uni", "--out", "x"]).unwrap();
        let Command::TrainUni { source, train, .. } = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(source.synth.config(), SyntheticConfig::default());
        let lib = ExperimentConfig::default();
        let ours = train.config(lib.seed, lib.student_modality).unwrap();
        assert_eq!(ours, lib);
    }

    #[test]
    fn fractions_and_seed_lists() {
        assert_eq!(fraction("1/4").unwrap(), 0.25);
        assert_eq!(fraction("0.5").unwrap(), 0.5);
        assert!(fraction("1/0").is_err());
        assert!(fraction("x").is_err());
        assert_eq!(seed_list("0..3").unwrap().0, vec![0, 1, 2]);
        assert_eq!(seed_list("4, 9").unwrap().0, vec![4, 9]);
        assert!(seed_list("3..3").is_err());
    }
}
