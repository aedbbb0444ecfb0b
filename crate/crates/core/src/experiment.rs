//! End-to-end pipelines over a loaded dataset: obfuscation, re-identification
//! training and evaluation, and adverse attribute evaluation.
//!
//! Every stochastic step draws from a seed derived from one run seed and a
//! fixed stage label, so a single command and a sweep cell given the same
//! seed produce identical results.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribute::{self, AttributeError, ChanceKind, ClassifierConfig};
use crate::ctl::{self, CtlConfig, CtlError, TrainOutcome};
use crate::dataset::{assign_attribute_splits, AttrSplit, DatasetManifest, Split, Task};
use crate::dp::{obfuscate, DpError, Epsilon, PrivacyParams, Sensitivity};
use crate::embedding::{hist_features, EmbeddingVector, FeatureConfig, FeatureVector, LinearEmbedder};
use crate::raster::ImageRgb;
use crate::report::{AttrRow, ReidRow};
use crate::retrieval::{self, EvalOptions, Identity, Metrics, Mode, RetrievalError};
use crate::seed::{derive_seed, derive_seed_str, rng_from_seed};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Ctl(#[from] CtlError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{task}: {source}")]
    Attribute { task: Task, source: AttributeError },
    #[error("manifest references {0:?} but no image was loaded for it")]
    MissingImage(PathBuf),
    #[error("{0} images supplied for {1} manifest paths")]
    ImageCount(usize, usize),
    #[error("dataset has no {0} records")]
    NoRecords(&'static str),
}

/// Stage labels mixed into the run seed.
pub mod stage {
    pub const OBFUSCATE: &str = "obfuscate";
    pub const EMBEDDER_INIT: &str = "embedder-init";
    pub const CTL: &str = "ctl";
    pub const ATTRIBUTE_SPLIT: &str = "attribute-split";

    pub fn classifier(task: crate::dataset::Task) -> String {
        format!("classifier/{task}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReidConfig {
    pub features: FeatureConfig,
    pub dim: usize,
    pub ctl: CtlConfig,
    pub camera_aware: bool,
}

impl Default for ReidConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            dim: 32,
            ctl: CtlConfig::default(),
            camera_aware: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttrConfig {
    pub features: FeatureConfig,
    pub classifier: ClassifierConfig,
    pub tasks: Vec<Task>,
    /// Used only for records without an explicit split.
    pub train_fraction: f64,
}

impl Default for AttrConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            classifier: ClassifierConfig::default(),
            tasks: Task::ALL.to_vec(),
            train_fraction: 0.8,
        }
    }
}

/// A manifest together with its images in [`DatasetManifest::image_paths`] order.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageRgb>,
    index: HashMap<PathBuf, usize>,
}

impl LoadedDataset {
    pub fn new(manifest: DatasetManifest, images: Vec<ImageRgb>) -> Result<Self, ExperimentError> {
        let paths = manifest.image_paths();
        if paths.len() != images.len() {
            return Err(ExperimentError::ImageCount(images.len(), paths.len()));
        }
        let index = paths.into_iter().enumerate().map(|(i, p)| (p, i)).collect();
        Ok(Self {
            manifest,
            images,
            index,
        })
    }

    pub fn image(&self, rel: &std::path::Path) -> Result<&ImageRgb, ExperimentError> {
        self.index
            .get(rel)
            .map(|&i| &self.images[i])
            .ok_or_else(|| ExperimentError::MissingImage(rel.to_path_buf()))
    }

    /// Same manifest with every image replaced by `f(index, image)`.
    pub fn map_images<E>(
        &self,
        f: impl Fn(usize, &ImageRgb) -> Result<ImageRgb, E>,
    ) -> Result<Self, E> {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| f(i, img))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            manifest: self.manifest.clone(),
            images,
            index: self.index.clone(),
        })
    }
}

/// Obfuscates every image; image `i` uses its own generator seeded with
/// `derive_seed(derive_seed_str(seed, "obfuscate"), i)`.
pub fn obfuscate_dataset(data: &LoadedDataset, params: &PrivacyParams, seed: u64) -> Result<LoadedDataset, ExperimentError> {
    let base = derive_seed_str(seed, stage::OBFUSCATE);
    Ok(data.map_images(|i, img| obfuscate(img, params, &mut rng_from_seed(derive_seed(base, i as u64))))?)
}

fn features_for<'a>(
    data: &LoadedDataset,
    paths: impl Iterator<Item = &'a PathBuf>,
    config: FeatureConfig,
) -> Result<Vec<FeatureVector>, ExperimentError> {
    paths.map(|p| Ok(hist_features(data.image(p)?, config))).collect()
}

pub fn initial_embedder(config: &ReidConfig, seed: u64) -> LinearEmbedder {
    LinearEmbedder::random(config.features, config.dim, derive_seed_str(seed, stage::EMBEDDER_INIT))
}

/// Trains a fresh embedder with CTL on the training split.
pub fn train_reid(data: &LoadedDataset, config: &ReidConfig, seed: u64) -> Result<TrainOutcome, ExperimentError> {
    let train: Vec<_> = data.manifest.persons_in(Split::Train).collect();
    if train.is_empty() {
        return Err(ExperimentError::NoRecords("training"));
    }
    let features = features_for(data, train.iter().map(|r| &r.image_path), config.features)?;
    let labels: Vec<u32> = train.iter().map(|r| r.person_id).collect();
    let ctl_config = CtlConfig {
        seed: derive_seed_str(seed, stage::CTL),
        ..config.ctl.clone()
    };
    Ok(ctl::train(&initial_embedder(config, seed), &features, &labels, &ctl_config)?)
}

fn embed_split(
    data: &LoadedDataset,
    embedder: &LinearEmbedder,
    split: Split,
) -> Result<(Vec<EmbeddingVector>, Vec<Identity>), ExperimentError> {
    let mut embeddings = Vec::new();
    let mut labels = Vec::new();
    for r in data.manifest.persons_in(split) {
        embeddings.push(embedder.embed(data.image(&r.image_path)?));
        labels.push(Identity {
            person_id: r.person_id,
            camera_id: r.camera_id,
        });
    }
    Ok((embeddings, labels))
}

/// Evaluates query against gallery in both regular and centroid mode.
pub fn evaluate_reid(
    data: &LoadedDataset,
    embedder: &LinearEmbedder,
    camera_aware: bool,
) -> Result<[Metrics; 2], ExperimentError> {
    let (q, ql) = embed_split(data, embedder, Split::Query)?;
    let (g, gl) = embed_split(data, embedder, Split::Gallery)?;
    if q.is_empty() {
        return Err(ExperimentError::NoRecords("query"));
    }
    if g.is_empty() {
        return Err(ExperimentError::NoRecords("gallery"));
    }
    let regular = retrieval::evaluate(&q, &ql, &g, &gl, EvalOptions::regular())?;
    let centroid = retrieval::evaluate(
        &q,
        &ql,
        &g,
        &gl,
        EvalOptions {
            mode: Mode::Centroid,
            camera_aware,
        },
    )?;
    Ok([regular, centroid])
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttrResult {
    pub task: Task,
    pub accuracy: f64,
    pub chance_uniform: f64,
    pub chance_majority: f64,
    pub loss_trace: Vec<f64>,
}

/// Trains one classifier per task on the training records and scores it on
/// the evaluation records. Chance levels are computed on the evaluation labels.
pub fn evaluate_attributes(data: &LoadedDataset, config: &AttrConfig, seed: u64) -> Result<Vec<AttrResult>, ExperimentError> {
    let mut records = data.manifest.attributes.clone();
    if records.is_empty() {
        return Err(ExperimentError::NoRecords("attribute"));
    }
    assign_attribute_splits(&mut records, config.train_fraction, derive_seed_str(seed, stage::ATTRIBUTE_SPLIT));
    let (train, eval): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.split == Some(AttrSplit::Train));
    let train_x = features_for(data, train.iter().map(|r| &r.image_path), config.features)?;
    let eval_x = features_for(data, eval.iter().map(|r| &r.image_path), config.features)?;
    let mut out = Vec::new();
    for &task in &config.tasks {
        let wrap = |source| ExperimentError::Attribute { task, source };
        let classes = data.manifest.cardinalities.of(task);
        let train_y: Vec<usize> = train.iter().map(|r| r.label(task)).collect();
        let eval_y: Vec<usize> = eval.iter().map(|r| r.label(task)).collect();
        let cfg = ClassifierConfig {
            seed: derive_seed_str(seed, &stage::classifier(task)),
            ..config.classifier.clone()
        };
        let trained = attribute::train_classifier(&train_x, &train_y, task, classes, &cfg).map_err(wrap)?;
        out.push(AttrResult {
            task,
            accuracy: attribute::accuracy(&trained.classifier, &eval_x, &eval_y).map_err(wrap)?,
            chance_uniform: attribute::chance_level(&eval_y, classes, ChanceKind::Uniform).map_err(wrap)?,
            chance_majority: attribute::chance_level(&eval_y, classes, ChanceKind::Majority).map_err(wrap)?,
            loss_trace: trained.loss_trace,
        });
    }
    Ok(out)
}

/// One point of a (b, c, ε) grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub block: usize,
    pub bin: u32,
    pub epsilon: Epsilon,
}

impl Cell {
    pub fn key(&self) -> String {
        format!("b{}_c{}_eps{}", self.block, self.bin, self.epsilon)
    }

    /// Seed of this cell under a global run seed.
    pub fn seed(&self, global: u64) -> u64 {
        derive_seed_str(global, &format!("cell/{}", self.key()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineFlags {
    pub strict: bool,
    pub quantise_midpoint: bool,
    pub skip_reid: bool,
    pub skip_attributes: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub seed: u64,
    pub sensitivity: Sensitivity,
    /// Laplace scale used, `None` with noise disabled.
    pub noise_scale: Option<f64>,
    pub reid: Vec<ReidRow>,
    pub reid_loss_trace: Vec<f64>,
    pub attributes: Vec<AttrRow>,
}

pub fn cell_params(cell: &Cell, flags: &PipelineFlags) -> Result<PrivacyParams, DpError> {
    Ok(PrivacyParams::new(cell.epsilon, cell.block, cell.bin)?
        .with_strict(flags.strict)
        .with_quantise_mode(if flags.quantise_midpoint {
            crate::dp::QuantiseMode::Midpoint
        } else {
            crate::dp::QuantiseMode::Floor
        }))
}

/// Obfuscate, train, and evaluate one grid cell using `seed` for every stage.
pub fn run_cell(
    data: &LoadedDataset,
    cell: Cell,
    seed: u64,
    reid: &ReidConfig,
    attr: &AttrConfig,
    flags: &PipelineFlags,
) -> Result<CellResult, ExperimentError> {
    let params = cell_params(&cell, flags)?;
    let (w, h) = (data.manifest.width, data.manifest.height);
    let sensitivity = params.sensitivity(w, h)?;
    let noise_scale = params.noise_scale(w, h)?.map(|s| s.get());
    let noised = obfuscate_dataset(data, &params, seed)?;
    let mut result = CellResult {
        cell,
        seed,
        sensitivity,
        noise_scale,
        reid: Vec::new(),
        reid_loss_trace: Vec::new(),
        attributes: Vec::new(),
    };
    if !flags.skip_reid && !data.manifest.persons.is_empty() {
        let trained = train_reid(&noised, reid, seed)?;
        let metrics = evaluate_reid(&noised, &trained.embedder, reid.camera_aware)?;
        result.reid = metrics
            .iter()
            .zip([Mode::Regular, Mode::Centroid])
            .map(|(m, mode)| ReidRow {
                mode,
                epsilon: cell.epsilon,
                block: cell.block,
                bin: cell.bin,
                map: m.map,
                top1: m.top1,
            })
            .collect();
        result.reid_loss_trace = trained.loss_trace;
    }
    if !flags.skip_attributes && !data.manifest.attributes.is_empty() {
        result.attributes = evaluate_attributes(&noised, attr, seed)?
            .into_iter()
            .map(|r| AttrRow {
                task: r.task,
                epsilon: cell.epsilon,
                block: cell.block,
                bin: cell.bin,
                accuracy: r.accuracy,
                chance_uniform: r.chance_uniform,
                chance_majority: r.chance_majority,
            })
            .collect();
    }
    Ok(result)
}
