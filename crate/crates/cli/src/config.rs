//! Run configuration: defaults, JSON config file, and command-line overrides.

use std::path::{Path, PathBuf};

use epsimage::attribute::ClassifierConfig;
use epsimage::ctl::{CtlConfig, NegativeSelection};
use epsimage::dataset::{Cardinalities, SynthConfig, Task};
use epsimage::dp::{Epsilon, PrivacyParams};
use epsimage::embedding::FeatureConfig;
use epsimage::experiment::{AttrConfig, Cell, PipelineFlags, ReidConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Flat, fully-resolved configuration. Every field has a default; a JSON
/// config file may set any subset, and command-line flags override both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root (CSV manifests or a Market1501 layout).
    pub dataset: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    /// Calibrate noise to the worst-case L1 sensitivity.
    pub strict: bool,
    /// Build test-time centroids without the query camera's samples.
    pub camera_aware: bool,
    pub quantise_midpoint: bool,

    /// Single-cell parameters for `obfuscate`.
    pub epsilon: Epsilon,
    pub b: usize,
    pub c: u32,

    /// Sweep grid of `(b, c)` pairs and ε values.
    pub grid: Vec<(usize, u32)>,
    pub epsilons: Vec<Epsilon>,

    pub synth_ids: usize,
    pub synth_cameras: usize,
    pub synth_imgs_per_pair: usize,
    pub width: usize,
    pub height: usize,
    pub train_fraction: f64,
    pub age_groups: usize,
    pub ethnicities: usize,

    pub feature_grid: usize,
    pub feature_bins: usize,
    pub embedding_dim: usize,
    pub margin: f64,
    pub classes_per_batch: usize,
    pub instances_per_class: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negative: NegativeSelection,

    pub tasks: Vec<Task>,
    pub clf_epochs: usize,
    pub clf_learning_rate: f64,
    pub attr_train_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let ctl = CtlConfig::default();
        let features = FeatureConfig::default();
        let clf = ClassifierConfig::default();
        let attr = AttrConfig::default();
        Self {
            dataset: None,
            seed: 0,
            jobs: 1,
            strict: false,
            camera_aware: true,
            quantise_midpoint: false,
            epsilon: Epsilon::Disabled,
            b: 1,
            c: 1,
            grid: vec![(1, 64), (2, 32), (4, 16)],
            epsilons: default_epsilons(),
            synth_ids: synth.n_ids,
            synth_cameras: synth.n_cameras,
            synth_imgs_per_pair: synth.imgs_per_pair,
            width: synth.width,
            height: synth.height,
            train_fraction: synth.train_fraction,
            age_groups: synth.cardinalities.age_groups,
            ethnicities: synth.cardinalities.ethnicities,
            feature_grid: features.grid,
            feature_bins: features.bins,
            embedding_dim: ReidConfig::default().dim,
            margin: ctl.margin,
            classes_per_batch: ctl.classes_per_batch,
            instances_per_class: ctl.instances_per_class,
            learning_rate: ctl.learning_rate,
            epochs: ctl.epochs,
            negative: ctl.negative,
            tasks: attr.tasks,
            clf_epochs: clf.epochs,
            clf_learning_rate: clf.learning_rate,
            attr_train_fraction: attr.train_fraction,
        }
    }
}

pub fn default_epsilons() -> Vec<Epsilon> {
    vec![
        Epsilon::Value(1e-3),
        Epsilon::Value(1.0),
        Epsilon::Value(1e3),
        Epsilon::Value(1e6),
        Epsilon::Disabled,
    ]
}

/// Grid that varies `b` with `c = 1` and `c` with `b = 1`, noise disabled.
pub fn ablation_grid() -> Vec<(usize, u32)> {
    let mut grid: Vec<(usize, u32)> = (1..=6).map(|k| (1usize << k, 1)).collect();
    grid.extend((1..=7).map(|k| (1, 1u32 << k)));
    grid
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.epsilons.is_empty() {
            return bad("epsilon list is empty".into());
        }
        if self.grid.is_empty() {
            return bad("(b, c) grid is empty".into());
        }
        for &(b, c) in self.grid.iter().chain(std::iter::once(&(self.b, self.c))) {
            PrivacyParams::new(Epsilon::Disabled, b, c).map_err(|e| CliError::Config(format!("b={b}, c={c}: {e}")))?;
        }
        self.features()?;
        self.ctl_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.train_fraction) || !(0.0..=1.0).contains(&self.attr_train_fraction) {
            return bad("train fractions must lie in [0, 1]".into());
        }
        if self.tasks.is_empty() {
            return bad("task list is empty".into());
        }
        Ok(())
    }

    pub fn features(&self) -> Result<FeatureConfig, CliError> {
        FeatureConfig::new(self.feature_grid, self.feature_bins).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn cardinalities(&self) -> Cardinalities {
        Cardinalities {
            gender: 2,
            age_groups: self.age_groups,
            ethnicities: self.ethnicities,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_ids: self.synth_ids,
            n_cameras: self.synth_cameras,
            imgs_per_pair: self.synth_imgs_per_pair,
            width: self.width,
            height: self.height,
            seed: self.seed,
            train_fraction: self.train_fraction,
            cardinalities: self.cardinalities(),
        }
    }

    pub fn ctl_config(&self) -> CtlConfig {
        CtlConfig {
            margin: self.margin,
            classes_per_batch: self.classes_per_batch,
            instances_per_class: self.instances_per_class,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed: self.seed,
            negative: self.negative,
        }
    }

    pub fn reid_config(&self) -> Result<ReidConfig, CliError> {
        Ok(ReidConfig {
            features: self.features()?,
            dim: self.embedding_dim,
            ctl: self.ctl_config(),
            camera_aware: self.camera_aware,
        })
    }

    pub fn attr_config(&self) -> Result<AttrConfig, CliError> {
        Ok(AttrConfig {
            features: self.features()?,
            classifier: ClassifierConfig {
                epochs: self.clf_epochs,
                learning_rate: self.clf_learning_rate,
                seed: self.seed,
            },
            tasks: self.tasks.clone(),
            train_fraction: self.attr_train_fraction,
        })
    }

    pub fn flags(&self) -> PipelineFlags {
        PipelineFlags {
            strict: self.strict,
            quantise_midpoint: self.quantise_midpoint,
            skip_reid: false,
            skip_attributes: false,
        }
    }

    pub fn privacy_params(&self) -> Result<PrivacyParams, CliError> {
        let cell = Cell {
            block: self.b,
            bin: self.c,
            epsilon: self.epsilon,
        };
        epsimage::experiment::cell_params(&cell, &self.flags()).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn cells(&self) -> Vec<Cell> {
        self.grid
            .iter()
            .flat_map(|&(block, bin)| {
                self.epsilons.iter().map(move |&epsilon| Cell { block, bin, epsilon })
            })
            .collect()
    }
}

/// Parses `b:c` pairs separated by commas, e.g. `1:64,2:32`.
pub fn parse_grid(s: &str) -> Result<Vec<(usize, u32)>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (b, c) = pair
                .split_once(':')
                .ok_or_else(|| format!("grid entry {pair:?} is not b:c"))?;
            Ok((
                b.trim().parse().map_err(|_| format!("bad block side {b:?}"))?,
                c.trim().parse().map_err(|_| format!("bad bin width {c:?}"))?,
            ))
        })
        .collect()
}

pub fn parse_epsilons(s: &str) -> Result<Vec<Epsilon>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|e| e.parse::<Epsilon>().map_err(|err| err.to_string()))
        .collect()
}

pub fn parse_tasks(s: &str) -> Result<Vec<Task>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|t| match t.trim() {
            "gender" => Ok(Task::Gender),
            "age" => Ok(Task::Age),
            "ethnicity" => Ok(Task::Ethnicity),
            other => Err(format!("unknown task {other:?}")),
        })
        .collect()
}
