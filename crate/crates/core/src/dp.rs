//! The image differential-privacy mechanism.
//!
//! An image is reduced to a grid of `b`×`b` cells (per-channel block means),
//! each cell value is snapped to one of `256/c` levels, and every cell channel
//! receives one independent Laplace draw of scale `Δf/ε`, replicated over the
//! cell's pixels. The result is clamped back to 8 bits.
//!
//! Two sensitivities are computed for every image size:
//!
//! ```text
//! Δf        = (w·h / b²) · (256/c − 1)³
//! strict Δf = ⌈w/b⌉ · ⌈h/b⌉ · 3 · (256 − c)
//! ```
//!
//! The first is the published calibration and the default. The second is the
//! worst-case L1 distance between two cell representations, and is used when
//! strict mode is enabled.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{ImageError, ImageF64, ImageRgb};
use crate::seed::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("cannot parse epsilon {0:?}: expected a positive number or \"none\"")]
    EpsilonSyntax(String),
    #[error("block side must be at least 1")]
    ZeroBlock,
    #[error("block side {block} exceeds image dimensions {width}x{height}")]
    BlockTooLarge {
        block: usize,
        width: usize,
        height: usize,
    },
    #[error("bin width {0} must divide 256 and leave at least two levels")]
    InvalidBinWidth(u32),
    #[error("Laplace scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("cell images differ in shape: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Privacy budget, or the noise-disabled mode used for unnoised baselines and
/// dimensionality-reduction ablations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Disabled,
    Value(f64),
}

impl Epsilon {
    pub fn new(value: f64) -> Result<Self, DpError> {
        if value > 0.0 && value.is_finite() {
            Ok(Epsilon::Value(value))
        } else {
            Err(DpError::InvalidEpsilon(value))
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Epsilon::Disabled => None,
            Epsilon::Value(v) => Some(v),
        }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Disabled => f.write_str("none"),
            Epsilon::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Epsilon {
    type Err = DpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Epsilon::Disabled);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| DpError::EpsilonSyntax(s.to_string()))?;
        Epsilon::new(v)
    }
}

impl Serialize for Epsilon {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Epsilon::new(v),
            Raw::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Representative value of a quantisation bin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantiseMode {
    /// `⌊v/c⌋·c`
    #[default]
    Floor,
    /// `⌊v/c⌋·c + (c−1)/2`, the centre of the integer bin.
    Midpoint,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: Epsilon,
    /// Pixelisation block side `b`.
    pub block: usize,
    /// Quantisation bin width `c`.
    pub bin: u32,
    pub quantise_mode: QuantiseMode,
    /// Calibrate noise to the worst-case L1 bound instead of the published Δf.
    pub strict: bool,
}

impl PrivacyParams {
    pub fn new(epsilon: Epsilon, block: usize, bin: u32) -> Result<Self, DpError> {
        if block == 0 {
            return Err(DpError::ZeroBlock);
        }
        check_bin_width(bin)?;
        Ok(Self {
            epsilon,
            block,
            bin,
            quantise_mode: QuantiseMode::Floor,
            strict: false,
        })
    }

    pub fn with_strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn with_quantise_mode(mut self, mode: QuantiseMode) -> Self {
        self.quantise_mode = mode;
        self
    }

    pub fn sensitivity(&self, width: usize, height: usize) -> Result<Sensitivity, DpError> {
        sensitivity(width, height, self.block, self.bin)
    }

    /// Laplace scale for an image of the given size; `None` when noise is disabled.
    pub fn noise_scale(&self, width: usize, height: usize) -> Result<Option<NoiseScale>, DpError> {
        let sens = self.sensitivity(width, height)?;
        match self.epsilon {
            Epsilon::Disabled => Ok(None),
            Epsilon::Value(eps) => {
                let delta = if self.strict {
                    sens.strict_delta_f
                } else {
                    sens.delta_f
                };
                NoiseScale::new(delta / eps).map(Some)
            }
        }
    }
}

fn check_bin_width(bin: u32) -> Result<(), DpError> {
    if bin == 0 || bin >= 256 || 256 % bin != 0 {
        return Err(DpError::InvalidBinWidth(bin));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sensitivity {
    pub delta_f: f64,
    pub strict_delta_f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct NoiseScale(f64);

impl NoiseScale {
    pub fn new(scale: f64) -> Result<Self, DpError> {
        if scale > 0.0 && scale.is_finite() {
            Ok(Self(scale))
        } else {
            Err(DpError::InvalidScale(scale))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

pub fn sensitivity(width: usize, height: usize, block: usize, bin: u32) -> Result<Sensitivity, DpError> {
    if block == 0 {
        return Err(DpError::ZeroBlock);
    }
    check_bin_width(bin)?;
    if block > width.min(height) {
        return Err(DpError::BlockTooLarge {
            block,
            width,
            height,
        });
    }
    let levels_span = f64::from(256 / bin - 1);
    let delta_f = (width * height) as f64 / (block * block) as f64 * levels_span.powi(3);
    let cells = width.div_ceil(block) * height.div_ceil(block);
    let strict_delta_f = (cells * 3 * (256 - bin as usize)) as f64;
    Ok(Sensitivity {
        delta_f,
        strict_delta_f,
    })
}

/// Per-channel block means on the cell grid (`⌈w/b⌉ × ⌈h/b⌉`). Ragged edge
/// cells average over the pixels they actually contain.
pub fn cell_means(img: &ImageF64, block: usize) -> ImageF64 {
    assert!(block >= 1, "block side must be at least 1");
    let (w, h) = (img.width(), img.height());
    let (cols, rows) = (w.div_ceil(block), h.div_ceil(block));
    let mut sums = vec![0.0; cols * rows * 3];
    let mut counts = vec![0usize; cols * rows];
    let src = img.data();
    for y in 0..h {
        let row = y / block;
        for x in 0..w {
            let cell = row * cols + x / block;
            counts[cell] += 1;
            for ch in 0..3 {
                sums[cell * 3 + ch] += src[(y * w + x) * 3 + ch];
            }
        }
    }
    for (cell, &n) in counts.iter().enumerate() {
        for ch in 0..3 {
            sums[cell * 3 + ch] /= n as f64;
        }
    }
    ImageF64::new(cols, rows, sums).expect("cell grid is non-empty")
}

/// Inverse of [`cell_means`]' grid layout: paints each cell value over its pixels.
pub fn expand_cells(cells: &ImageF64, block: usize, width: usize, height: usize) -> ImageF64 {
    assert_eq!(cells.width(), width.div_ceil(block));
    assert_eq!(cells.height(), height.div_ceil(block));
    let src = cells.data();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        let row = (y / block) * cells.width();
        for x in 0..width {
            let i = (row + x / block) * 3;
            data.extend_from_slice(&src[i..i + 3]);
        }
    }
    ImageF64::new(width, height, data).expect("dimensions are positive")
}

/// Replaces every pixel by the mean of its `block`×`block` cell.
pub fn pixelise(img: &ImageF64, block: usize) -> ImageF64 {
    if block == 1 {
        return img.clone();
    }
    expand_cells(&cell_means(img, block), block, img.width(), img.height())
}

/// Snaps each channel (clamped to `[0, 255]` first) to its bin representative.
pub fn quantise(img: &ImageF64, bin: u32, mode: QuantiseMode) -> Result<ImageF64, DpError> {
    check_bin_width(bin)?;
    let c = f64::from(bin);
    let offset = match mode {
        QuantiseMode::Floor => 0.0,
        QuantiseMode::Midpoint => (c - 1.0) / 2.0,
    };
    let data = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 255.0) / c).floor() * c + offset)
        .collect();
    Ok(ImageF64::new(img.width(), img.height(), data)?)
}

/// Inverse-CDF transform of `u ∈ (−½, ½)` into a Laplace(0, scale) variate.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn laplace_sample(scale: f64, rng: &mut Rng) -> Result<f64, DpError> {
    let scale = NoiseScale::new(scale)?.get();
    loop {
        // gen::<f64>() is in [0, 1); u = −½ would map to an infinite draw.
        let u = rng.gen::<f64>() - 0.5;
        if u > -0.5 {
            return Ok(laplace_from_uniform(u, scale));
        }
    }
}

/// The deterministic part of the mechanism: cell means followed by
/// quantisation, on the cell grid.
pub fn cell_representation(img: &ImageRgb, params: &PrivacyParams) -> Result<ImageF64, DpError> {
    params.sensitivity(img.width(), img.height())?;
    let cells = cell_means(&img.to_float(), params.block);
    quantise(&cells, params.bin, params.quantise_mode)
}

/// Applies the full mechanism to one image.
pub fn obfuscate(img: &ImageRgb, params: &PrivacyParams, rng: &mut Rng) -> Result<ImageRgb, DpError> {
    let scale = params.noise_scale(img.width(), img.height())?;
    let mut cells = cell_representation(img, params)?;
    if let Some(scale) = scale {
        for v in cells.data_mut() {
            *v += laplace_sample(scale.get(), rng)?;
        }
    }
    let pixels = expand_cells(&cells, params.block, img.width(), img.height());
    Ok(pixels.clamp_round()?)
}

fn check_same_shape(u: &ImageF64, v: &ImageF64) -> Result<(), DpError> {
    if u.width() != v.width() || u.height() != v.height() {
        return Err(DpError::ShapeMismatch(u.width(), u.height(), v.width(), v.height()));
    }
    Ok(())
}

/// L1 distance between two cell representations.
pub fn l1_distance(u: &ImageF64, v: &ImageF64) -> Result<f64, DpError> {
    check_same_shape(u, v)?;
    Ok(u.data().iter().zip(v.data()).map(|(a, b)| (a - b).abs()).sum())
}

/// Supremum over outputs of the absolute log-density ratio of the
/// independent-Laplace mechanism at inputs `u` and `v`: `‖u − v‖₁ / scale`.
pub fn dp_log_ratio_bound(u: &ImageF64, v: &ImageF64, scale: f64) -> Result<f64, DpError> {
    let scale = NoiseScale::new(scale)?.get();
    Ok(l1_distance(u, v)? / scale)
}

/// Exact `log p(y | u) − log p(y | v)` for a concrete noised cell output `y`.
pub fn log_density_ratio(y: &ImageF64, u: &ImageF64, v: &ImageF64, scale: f64) -> Result<f64, DpError> {
    let scale = NoiseScale::new(scale)?.get();
    check_same_shape(y, u)?;
    check_same_shape(u, v)?;
    Ok(y
        .data()
        .iter()
        .zip(u.data().iter().zip(v.data()))
        .map(|(yi, (ui, vi))| ((yi - vi).abs() - (yi - ui).abs()) / scale)
        .sum())
}
