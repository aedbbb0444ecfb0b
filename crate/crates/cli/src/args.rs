//! Command-line grammar and its merge into a [`RunConfig`].

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use epsimage::ctl::NegativeSelection;
use epsimage::dataset::Task;
use epsimage::dp::Epsilon;

use crate::config::{ablation_grid, parse_epsilons, parse_grid, parse_tasks, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "epsimage", version, about = "Differentially private image pixelisation experiments")]
pub struct Cli {
    /// JSON file with any subset of the run configuration keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed from which every random stream is derived.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Calibrate noise to the worst-case L1 sensitivity.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera dataset.
    Synth(SynthArgs),
    /// Obfuscate every image of a dataset.
    Obfuscate(ObfuscateArgs),
    /// Train a re-identification embedder with the centroid triplet loss.
    Train(TrainArgs),
    /// Evaluate re-identification in regular and centroid mode.
    EvalReid(EvalReidArgs),
    /// Train and score demographic attribute classifiers.
    EvalAttr(EvalAttrArgs),
    /// Run the full pipeline over a (b, c, ε) grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of identities.
    #[arg(long)]
    pub ids: Option<usize>,
    /// Number of cameras.
    #[arg(long)]
    pub cameras: Option<usize>,
    /// Images per (identity, camera) pair.
    #[arg(long)]
    pub imgs_per_pair: Option<usize>,
    /// Image width in pixels.
    #[arg(long)]
    pub width: Option<usize>,
    /// Image height in pixels.
    #[arg(long)]
    pub height: Option<usize>,
    /// Fraction of identities assigned to the training split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DatasetArg {
    /// Dataset root with persons.csv / attributes.csv or a Market1501 layout.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ObfuscateArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Privacy budget, or `none` to disable noise.
    #[arg(long)]
    pub epsilon: Option<Epsilon>,
    /// Block side in pixels.
    #[arg(short = 'b', long = "block")]
    pub b: Option<usize>,
    /// Quantisation bin width.
    #[arg(short = 'c', long = "bin")]
    pub c: Option<u32>,
    /// Use bin midpoints instead of bin floors as representatives.
    #[arg(long)]
    pub midpoint: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Training epochs for the embedder.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Embedder learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Triplet margin.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Identities per batch.
    #[arg(long)]
    pub classes_per_batch: Option<usize>,
    /// Images per identity in a batch.
    #[arg(long)]
    pub instances_per_class: Option<usize>,
    /// Negative centroid selection: `hardest` or `random`.
    #[arg(long, value_parser = parse_negative)]
    pub negative: Option<NegativeSelection>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalReidArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Embedder checkpoint; trains one in-process when omitted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Keep query-camera samples in gallery centroids.
    #[arg(long)]
    pub all_cameras: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalAttrArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Comma-separated subset of gender,age,ethnicity.
    #[arg(long, value_parser = parse_tasks)]
    pub tasks: Option<::std::vec::Vec<Task>>,
    /// Training epochs for each classifier.
    #[arg(long)]
    pub clf_epochs: Option<usize>,
    /// Classifier learning rate.
    #[arg(long)]
    pub clf_lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset root; a synthetic dataset is generated when omitted.
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Comma-separated `b:c` pairs.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<::std::vec::Vec<(usize, u32)>>,
    /// Comma-separated ε values; `none` disables noise.
    #[arg(long, value_parser = parse_epsilons)]
    pub epsilons: Option<::std::vec::Vec<Epsilon>>,
    /// Noise-free sweep over b with c = 1 and over c with b = 1.
    #[arg(long)]
    pub ablation: bool,
    /// Use bin midpoints instead of bin floors as representatives.
    #[arg(long)]
    pub midpoint: bool,
    /// Keep query-camera samples in gallery centroids.
    #[arg(long)]
    pub all_cameras: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

fn parse_negative(s: &str) -> Result<NegativeSelection, String> {
    match s {
        "hardest" => Ok(NegativeSelection::Hardest),
        "random" => Ok(NegativeSelection::Random),
        other => Err(format!("unknown negative selection {other:?}")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.learning_rate, self.lr);
        set(&mut cfg.margin, self.margin);
        set(&mut cfg.embedding_dim, self.dim);
        set(&mut cfg.classes_per_batch, self.classes_per_batch);
        set(&mut cfg.instances_per_class, self.instances_per_class);
        set(&mut cfg.negative, self.negative);
    }
}

impl Cli {
    /// Merges defaults, the config file and flags (in increasing priority),
    /// then validates the result.
    pub fn resolve(self) -> Result<(Command, RunConfig, PathBuf), CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.jobs, self.jobs);
        if self.strict {
            cfg.strict = true;
        }
        match &self.command {
            Command::Synth(a) => {
                set(&mut cfg.synth_ids, a.ids);
                set(&mut cfg.synth_cameras, a.cameras);
                set(&mut cfg.synth_imgs_per_pair, a.imgs_per_pair);
                set(&mut cfg.width, a.width);
                set(&mut cfg.height, a.height);
                set(&mut cfg.train_fraction, a.train_fraction);
            }
            Command::Obfuscate(a) => {
                set(&mut cfg.dataset, a.dataset.dataset.clone().map(Some));
                set(&mut cfg.epsilon, a.epsilon);
                set(&mut cfg.b, a.b);
                set(&mut cfg.c, a.c);
                cfg.quantise_midpoint |= a.midpoint;
            }
            Command::Train(a) => {
                set(&mut cfg.dataset, a.dataset.dataset.clone().map(Some));
                a.model.apply(&mut cfg);
            }
            Command::EvalReid(a) => {
                set(&mut cfg.dataset, a.dataset.dataset.clone().map(Some));
                a.model.apply(&mut cfg);
                if a.all_cameras {
                    cfg.camera_aware = false;
                }
            }
            Command::EvalAttr(a) => {
                set(&mut cfg.dataset, a.dataset.dataset.clone().map(Some));
                set(&mut cfg.tasks, a.tasks.clone());
                set(&mut cfg.clf_epochs, a.clf_epochs);
                set(&mut cfg.clf_learning_rate, a.clf_lr);
            }
            Command::Sweep(a) => {
                set(&mut cfg.dataset, a.dataset.dataset.clone().map(Some));
                set(&mut cfg.grid, a.grid.clone());
                set(&mut cfg.epsilons, a.epsilons.clone());
                if a.ablation {
                    cfg.grid = ablation_grid();
                    cfg.epsilons = vec![Epsilon::Disabled];
                }
                cfg.quantise_midpoint |= a.midpoint;
                if a.all_cameras {
                    cfg.camera_aware = false;
                }
                a.model.apply(&mut cfg);
            }
        }
        let needs_dataset = matches!(
            self.command,
            Command::Obfuscate(_) | Command::Train(_) | Command::EvalReid(_) | Command::EvalAttr(_)
        );
        if needs_dataset && cfg.dataset.is_none() {
            return Err(CliError::Config("--dataset is required".into()));
        }
        let out = self
            .out
            .ok_or_else(|| CliError::Config("--out is required".into()))?;
        cfg.validate()?;
        Ok((self.command, cfg, out))
    }
}
