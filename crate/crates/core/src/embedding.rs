//! Histogram features and the trainable linear embedder.

use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::ImageRgb;
use crate::seed::rng_from_seed;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid feature config: grid {grid}, bins {bins} (need grid >= 1, bins >= 2 dividing 256)")]
    InvalidConfig { grid: usize, bins: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Spatial grid side `g`.
    pub grid: usize,
    /// Histogram bins per channel `B`.
    pub bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { grid: 4, bins: 8 }
    }
}

impl FeatureConfig {
    pub fn new(grid: usize, bins: usize) -> Result<Self, EmbeddingError> {
        if grid == 0 || !(2..=256).contains(&bins) || 256 % bins != 0 {
            return Err(EmbeddingError::InvalidConfig { grid, bins });
        }
        Ok(Self { grid, bins })
    }

    /// `F = g·g·3·B`
    pub fn feature_dim(&self) -> usize {
        self.grid * self.grid * 3 * self.bins
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-block, per-channel normalised intensity histograms.
///
/// Layout is row-major over blocks, then channel, then bin. Pixel `(x, y)`
/// falls in block `(x·g/w, y·g/h)`. A block that receives no pixels (only
/// possible when `g` exceeds an image side) gets a uniform histogram.
pub fn hist_features(img: &ImageRgb, config: FeatureConfig) -> FeatureVector {
    let FeatureConfig { grid, bins } = config;
    let (w, h) = (img.width(), img.height());
    let bin_width = 256 / bins;
    let mut hist = vec![0.0; config.feature_dim()];
    let mut counts = vec![0usize; grid * grid];
    let data = img.data();
    for y in 0..h {
        let by = y * grid / h;
        for x in 0..w {
            let block = by * grid + x * grid / w;
            counts[block] += 1;
            let px = (y * w + x) * 3;
            for ch in 0..3 {
                let bin = usize::from(data[px + ch]) / bin_width;
                hist[(block * 3 + ch) * bins + bin] += 1.0;
            }
        }
    }
    for (block, &n) in counts.iter().enumerate() {
        let slice = &mut hist[block * 3 * bins..(block + 1) * 3 * bins];
        if n == 0 {
            slice.fill(1.0 / bins as f64);
        } else {
            slice.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    FeatureVector(hist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `D×F` weight matrix, row-major, mapping features to embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearEmbedder {
    config: FeatureConfig,
    dim: usize,
    weights: Vec<f64>,
}

const CHECKPOINT_MAGIC: &str = "epsimage-embedder";
const CHECKPOINT_VERSION: u32 = 1;

impl LinearEmbedder {
    pub fn from_weights(config: FeatureConfig, dim: usize, weights: Vec<f64>) -> Result<Self, EmbeddingError> {
        let expected = dim * config.feature_dim();
        if weights.len() != expected || dim == 0 {
            return Err(EmbeddingError::DimensionMismatch {
                expected,
                actual: weights.len(),
            });
        }
        Ok(Self {
            config,
            dim,
            weights,
        })
    }

    pub fn zeros(config: FeatureConfig, dim: usize) -> Self {
        Self::from_weights(config, dim, vec![0.0; dim * config.feature_dim()]).expect("consistent size")
    }

    /// Uniform initialisation in `±sqrt(3/F)`, deterministic in `seed`.
    pub fn random(config: FeatureConfig, dim: usize, seed: u64) -> Self {
        let f = config.feature_dim();
        let bound = (3.0 / f as f64).sqrt();
        let mut rng = rng_from_seed(seed);
        let weights = (0..dim * f).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::from_weights(config, dim, weights).expect("consistent size")
    }

    pub fn config(&self) -> FeatureConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn embed_features(&self, features: &FeatureVector) -> Result<EmbeddingVector, EmbeddingError> {
        let f = self.feature_dim();
        if features.len() != f {
            return Err(EmbeddingError::DimensionMismatch {
                expected: f,
                actual: features.len(),
            });
        }
        let out = self
            .weights
            .chunks_exact(f)
            .map(|row| row.iter().zip(features.values()).map(|(w, x)| w * x).sum())
            .collect();
        Ok(EmbeddingVector(out))
    }

    pub fn embed(&self, img: &ImageRgb) -> EmbeddingVector {
        self.embed_features(&hist_features(img, self.config))
            .expect("features built from own config")
    }

    /// `∂L/∂W = upstream ⊗ features`, given `upstream = ∂L/∂embedding`.
    pub fn embed_gradient(&self, features: &FeatureVector, upstream: &[f64]) -> Result<Vec<f64>, EmbeddingError> {
        if features.len() != self.feature_dim() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.feature_dim(),
                actual: features.len(),
            });
        }
        if upstream.len() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dim,
                actual: upstream.len(),
            });
        }
        Ok(upstream
            .iter()
            .flat_map(|&g| features.values().iter().map(move |&x| g * x))
            .collect())
    }

    /// Writes the text checkpoint:
    ///
    /// ```text
    /// epsimage-embedder 1
    /// grid=4 bins=8 dim=32 features=384
    /// <F comma-separated weights>   (D lines)
    /// ```
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), EmbeddingError> {
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(
            out,
            "grid={} bins={} dim={} features={}",
            self.config.grid,
            self.config.bins,
            self.dim,
            self.feature_dim()
        )?;
        for row in self.weights.chunks_exact(self.feature_dim()) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self, EmbeddingError> {
        let bad = |m: &str| EmbeddingError::Checkpoint(m.to_string());
        let mut lines = input.lines();
        let magic = lines.next().ok_or_else(|| bad("empty file"))??;
        let mut parts = magic.split_whitespace();
        if parts.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("not an embedder checkpoint"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(EmbeddingError::Checkpoint(format!("unsupported version {version}")));
        }
        let header = lines.next().ok_or_else(|| bad("missing header"))??;
        let field = |name: &str| -> Result<usize, EmbeddingError> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| EmbeddingError::Checkpoint(format!("missing header field {name}")))
        };
        let config = FeatureConfig::new(field("grid")?, field("bins")?)?;
        let dim = field("dim")?;
        if field("features")? != config.feature_dim() {
            return Err(bad("feature count disagrees with grid and bins"));
        }
        let mut weights = Vec::with_capacity(dim * config.feature_dim());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split(',') {
                weights.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|_| EmbeddingError::Checkpoint(format!("bad weight {tok:?}")))?,
                );
            }
        }
        Self::from_weights(config, dim, weights)
    }
}
