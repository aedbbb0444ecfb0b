//! Labelled person-image datasets: manifest CSVs, Market1501-style directory
//! ingestion and a seeded synthetic multi-camera generator.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{clamp_round_channel, load_image_file, save_ppm, ImageFileError, ImageRgb};
use crate::seed::{derive_seed_str, rng_from_seed, Rng};

pub const PERSONS_CSV: &str = "persons.csv";
pub const ATTRIBUTES_CSV: &str = "attributes.csv";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: missing column {column:?}")]
    MissingColumn { path: String, column: &'static str },
    #[error("{path}: unrecognised header, expected path,person_id,camera_id,split or path,gender,age_group,ethnicity")]
    UnknownHeader { path: String },
    #[error("{path} line {line}: {message}")]
    BadValue {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path} line {line}: {field} = {value} outside [0, {cardinality})")]
    OutOfRange {
        path: String,
        line: usize,
        field: &'static str,
        value: usize,
        cardinality: usize,
    },
    #[error(transparent)]
    UnreadableImage(#[from] ImageFileError),
    #[error("{path} is {found_w}x{found_h}, expected {expected_w}x{expected_h} like the rest of the dataset")]
    DimensionMismatch {
        path: String,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },
    #[error("filename {0:?} does not match <id>_c<cam>s<seq>_...")]
    BadFilename(String),
    #[error("invalid synthetic dataset request: {0}")]
    InvalidSynth(String),
    #[error("dataset contains no records")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" | "test" => Ok(Split::Gallery),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Train/eval assignment for attribute records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrSplit {
    Train,
    Eval,
}

impl FromStr for AttrSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(AttrSplit::Train),
            "eval" | "val" | "test" => Ok(AttrSplit::Eval),
            other => Err(format!("unknown attribute split {other:?}")),
        }
    }
}

impl fmt::Display for AttrSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttrSplit::Train => "train",
            AttrSplit::Eval => "eval",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersonRecord {
    /// Relative to the dataset root.
    pub image_path: PathBuf,
    pub person_id: u32,
    pub camera_id: u32,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeRecord {
    pub image_path: PathBuf,
    pub gender: usize,
    pub age_group: usize,
    pub ethnicity: usize,
    /// `None` when the CSV carries no split column.
    pub split: Option<AttrSplit>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gender,
    Age,
    Ethnicity,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Gender, Task::Age, Task::Ethnicity];
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Gender => "gender",
            Task::Age => "age",
            Task::Ethnicity => "ethnicity",
        })
    }
}

impl AttributeRecord {
    pub fn label(&self, task: Task) -> usize {
        match task {
            Task::Gender => self.gender,
            Task::Age => self.age_group,
            Task::Ethnicity => self.ethnicity,
        }
    }
}

/// Number of classes per attribute task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cardinalities {
    pub gender: usize,
    pub age_groups: usize,
    pub ethnicities: usize,
}

impl Default for Cardinalities {
    fn default() -> Self {
        Self {
            gender: 2,
            age_groups: 9,
            ethnicities: 7,
        }
    }
}

impl Cardinalities {
    pub fn of(&self, task: Task) -> usize {
        match task {
            Task::Gender => self.gender,
            Task::Age => self.age_groups,
            Task::Ethnicity => self.ethnicities,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub width: usize,
    pub height: usize,
    pub persons: Vec<PersonRecord>,
    pub attributes: Vec<AttributeRecord>,
    pub cardinalities: Cardinalities,
}

impl DatasetManifest {
    /// Distinct image paths in first-appearance order, persons before
    /// attributes. Position in this list is the image's index for seeding.
    pub fn image_paths(&self) -> Vec<PathBuf> {
        let mut seen = HashSet::new();
        self.persons
            .iter()
            .map(|r| &r.image_path)
            .chain(self.attributes.iter().map(|r| &r.image_path))
            .filter(|p| seen.insert(p.to_path_buf()))
            .cloned()
            .collect()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn persons_in(&self, split: Split) -> impl Iterator<Item = &PersonRecord> {
        self.persons.iter().filter(move |r| r.split == split)
    }

    /// Merges another manifest over the same root (same dimensions required).
    pub fn merge(mut self, other: DatasetManifest) -> Result<Self, DatasetError> {
        if self.persons.is_empty() && self.attributes.is_empty() {
            return Ok(other);
        }
        if other.width != self.width || other.height != self.height {
            let path = other
                .image_paths()
                .first()
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            return Err(DatasetError::DimensionMismatch {
                path,
                expected_w: self.width,
                expected_h: self.height,
                found_w: other.width,
                found_h: other.height,
            });
        }
        self.persons.extend(other.persons);
        self.attributes.extend(other.attributes);
        Ok(self)
    }
}

/// Extracts `(person_id, camera_id)` from a Market1501 filename such as
/// `0002_c1s1_000451_03.jpg`.
pub fn parse_market_filename(name: &str) -> Result<(u32, u32), DatasetError> {
    let bad = || DatasetError::BadFilename(name.to_string());
    let (id, rest) = name.split_once('_').ok_or_else(bad)?;
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let rest = rest.strip_prefix('c').ok_or_else(bad)?;
    let cam_len = rest.bytes().take_while(u8::is_ascii_digit).count();
    if cam_len == 0 {
        return Err(bad());
    }
    let after = &rest[cam_len..];
    let seq = after.strip_prefix('s').ok_or_else(bad)?;
    let seq_len = seq.bytes().take_while(u8::is_ascii_digit).count();
    if seq_len == 0 || !seq[seq_len..].starts_with('_') {
        return Err(bad());
    }
    let person_id = id.parse().map_err(|_| bad())?;
    let camera_id: u32 = rest[..cam_len].parse().map_err(|_| bad())?;
    if camera_id == 0 {
        return Err(bad());
    }
    Ok((person_id, camera_id))
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| ["ppm", "png", "jpg", "jpeg"].iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn check_dimensions(
    root: &Path,
    paths: impl IntoIterator<Item = PathBuf>,
) -> Result<(usize, usize), DatasetError> {
    let mut dims = None;
    for rel in paths {
        let img = load_image_file(&root.join(&rel))?;
        let found = (img.width(), img.height());
        match dims {
            None => dims = Some(found),
            Some((w, h)) if (w, h) != found => {
                return Err(DatasetError::DimensionMismatch {
                    path: rel.display().to_string(),
                    expected_w: w,
                    expected_h: h,
                    found_w: found.0,
                    found_h: found.1,
                })
            }
            _ => {}
        }
    }
    dims.ok_or(DatasetError::Empty)
}

/// Ingests a Market1501 directory layout (`bounding_box_train`, `query`,
/// `bounding_box_test`). Junk detections (id `-1`) are skipped.
pub fn load_market_dir(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut persons = Vec::new();
    for (dir, split) in [
        ("bounding_box_train", Split::Train),
        ("query", Split::Query),
        ("bounding_box_test", Split::Gallery),
    ] {
        let full = root.join(dir);
        if !full.is_dir() {
            continue;
        }
        let io = |source| DatasetError::Io {
            path: full.display().to_string(),
            source,
        };
        let mut names: Vec<String> = std::fs::read_dir(&full)
            .map_err(io)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        names.sort();
        for name in names {
            if !is_image_file(Path::new(&name)) || name.starts_with("-1") {
                continue;
            }
            let (person_id, camera_id) = parse_market_filename(&name)?;
            persons.push(PersonRecord {
                image_path: Path::new(dir).join(&name),
                person_id,
                camera_id,
                split,
            });
        }
    }
    let (width, height) = check_dimensions(root, persons.iter().map(|r| r.image_path.clone()))?;
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        width,
        height,
        persons,
        attributes: Vec::new(),
        cardinalities: Cardinalities::default(),
    })
}

/// Loads a person or attribute manifest CSV. Image paths are relative to the
/// CSV's directory. Every image is opened to enforce uniform dimensions.
pub fn load_manifest(csv_path: &Path, cardinalities: Cardinalities) -> Result<DatasetManifest, DatasetError> {
    let display = csv_path.display().to_string();
    let root = csv_path.parent().unwrap_or(Path::new("")).to_path_buf();
    let csv_err = |source| DatasetError::Csv {
        path: display.clone(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &'static str| headers.iter().position(|h| h == name);
    let require = |name: &'static str| {
        col(name).ok_or(DatasetError::MissingColumn {
            path: display.clone(),
            column: name,
        })
    };
    let path_col = require("path")?;
    let is_person = col("person_id").is_some() || col("camera_id").is_some();
    let is_attr = col("gender").is_some() || col("age_group").is_some() || col("ethnicity").is_some();

    let mut persons = Vec::new();
    let mut attributes = Vec::new();
    let parse_num = |rec: &csv::StringRecord, idx: usize, line: usize| -> Result<usize, DatasetError> {
        let raw = rec.get(idx).unwrap_or("");
        raw.parse().map_err(|_| DatasetError::BadValue {
            path: display.clone(),
            line,
            message: format!("{:?} is not a non-negative integer", raw),
        })
    };

    if is_person {
        let (pid, cam, split) = (require("person_id")?, require("camera_id")?, require("split")?);
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            let camera_id = parse_num(&rec, cam, line)?;
            if camera_id == 0 {
                return Err(DatasetError::BadValue {
                    path: display.clone(),
                    line,
                    message: "camera_id must be positive".into(),
                });
            }
            persons.push(PersonRecord {
                image_path: PathBuf::from(rec.get(path_col).unwrap_or("")),
                person_id: parse_num(&rec, pid, line)? as u32,
                camera_id: camera_id as u32,
                split: rec.get(split).unwrap_or("").parse().map_err(|message| DatasetError::BadValue {
                    path: display.clone(),
                    line,
                    message,
                })?,
            });
        }
    } else if is_attr {
        let cols = [require("gender")?, require("age_group")?, require("ethnicity")?];
        let split_col = col("split");
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 2;
            let mut labels = [0usize; 3];
            for ((slot, &c), task) in labels.iter_mut().zip(&cols).zip(Task::ALL) {
                let value = parse_num(&rec, c, line)?;
                let cardinality = cardinalities.of(task);
                if value >= cardinality {
                    return Err(DatasetError::OutOfRange {
                        path: display.clone(),
                        line,
                        field: match task {
                            Task::Gender => "gender",
                            Task::Age => "age_group",
                            Task::Ethnicity => "ethnicity",
                        },
                        value,
                        cardinality,
                    });
                }
                *slot = value;
            }
            let split = match split_col {
                Some(c) => Some(rec.get(c).unwrap_or("").parse().map_err(|message| DatasetError::BadValue {
                    path: display.clone(),
                    line,
                    message,
                })?),
                None => None,
            };
            attributes.push(AttributeRecord {
                image_path: PathBuf::from(rec.get(path_col).unwrap_or("")),
                gender: labels[0],
                age_group: labels[1],
                ethnicity: labels[2],
                split,
            });
        }
    } else {
        return Err(DatasetError::UnknownHeader { path: display });
    }

    let mut manifest = DatasetManifest {
        root: root.clone(),
        width: 0,
        height: 0,
        persons,
        attributes,
        cardinalities,
    };
    let (w, h) = check_dimensions(&root, manifest.image_paths())?;
    manifest.width = w;
    manifest.height = h;
    Ok(manifest)
}

/// Loads `persons.csv` and/or `attributes.csv` from a dataset root, falling
/// back to a Market1501 directory layout.
pub fn load_dataset_dir(root: &Path, cardinalities: Cardinalities) -> Result<DatasetManifest, DatasetError> {
    let persons = root.join(PERSONS_CSV);
    let attrs = root.join(ATTRIBUTES_CSV);
    if !persons.exists() && !attrs.exists() {
        return load_market_dir(root);
    }
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        width: 0,
        height: 0,
        persons: Vec::new(),
        attributes: Vec::new(),
        cardinalities,
    };
    for csv in [persons, attrs] {
        if csv.exists() {
            manifest = manifest.merge(load_manifest(&csv, cardinalities)?)?;
        }
    }
    manifest.root = root.to_path_buf();
    Ok(manifest)
}

pub fn write_person_csv(path: &Path, records: &[PersonRecord]) -> Result<(), DatasetError> {
    let display = path.display().to_string();
    let csv_err = |source| DatasetError::Csv {
        path: display.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["path", "person_id", "camera_id", "split"]).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.image_path.to_string_lossy().into_owned(),
            r.person_id.to_string(),
            r.camera_id.to_string(),
            r.split.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| DatasetError::Io { path: display, source })
}

pub fn write_attribute_csv(path: &Path, records: &[AttributeRecord]) -> Result<(), DatasetError> {
    let display = path.display().to_string();
    let csv_err = |source| DatasetError::Csv {
        path: display.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let with_split = records.iter().any(|r| r.split.is_some());
    let mut header = vec!["path", "gender", "age_group", "ethnicity"];
    if with_split {
        header.push("split");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.image_path.to_string_lossy().into_owned(),
            r.gender.to_string(),
            r.age_group.to_string(),
            r.ethnicity.to_string(),
        ];
        if with_split {
            row.push(r.split.map(|s| s.to_string()).unwrap_or_else(|| "train".into()));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DatasetError::Io { path: display, source })
}

/// Request for a synthetic multi-camera dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_ids: usize,
    pub n_cameras: usize,
    /// Images per (identity, camera) pair.
    pub imgs_per_pair: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Fraction of identities assigned to the training split.
    pub train_fraction: f64,
    pub cardinalities: Cardinalities,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_ids: 40,
            n_cameras: 3,
            imgs_per_pair: 8,
            width: 64,
            height: 128,
            seed: 0,
            train_fraction: 0.5,
            cardinalities: Cardinalities::default(),
        }
    }
}

/// Latent appearance of one synthetic identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Appearance {
    /// Index of the primary/secondary hue family of the upper-body colour (0..6).
    pub torso_family: usize,
    pub torso_rgb: [f64; 3],
    pub legs_hue: f64,
    pub legs_rgb: [f64; 3],
    /// Skin lightness in [0, 1).
    pub skin_tone: f64,
    pub skin_rgb: [f64; 3],
    /// Torso height as a fraction of the body below the head.
    pub torso_fraction: f64,
}

impl Appearance {
    fn sample(rng: &mut Rng) -> Self {
        let torso_family = rng.gen_range(0..6);
        let torso_hue = 60.0 * torso_family as f64 + rng.gen_range(-8.0..8.0);
        let torso_rgb = hsv_to_rgb(torso_hue, rng.gen_range(0.85..1.0), rng.gen_range(0.8..1.0));
        let legs_hue = rng.gen_range(0.0..360.0);
        let legs_rgb = hsv_to_rgb(legs_hue, rng.gen_range(0.2..0.8), rng.gen_range(0.15..0.5));
        let skin_tone: f64 = rng.gen_range(0.0..1.0);
        let dark = [70.0, 45.0, 30.0];
        let light = [245.0, 210.0, 180.0];
        let skin_rgb = std::array::from_fn(|i| dark[i] + skin_tone * (light[i] - dark[i]));
        Self {
            torso_family,
            torso_rgb,
            legs_hue,
            legs_rgb,
            skin_tone,
            skin_rgb,
            torso_fraction: rng.gen_range(0.45..0.65),
        }
    }

    /// Hue-bucket parity: even families are primaries (one channel high),
    /// odd families secondaries (two channels high).
    pub fn gender(&self) -> usize {
        self.torso_family % 2
    }

    pub fn age_group(&self, groups: usize) -> usize {
        ((self.legs_hue / 360.0 * groups as f64) as usize).min(groups - 1)
    }

    pub fn ethnicity(&self, groups: usize) -> usize {
        ((self.skin_tone * groups as f64) as usize).min(groups - 1)
    }
}

fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Fixed per-camera colour response.
#[derive(Clone, Debug, PartialEq)]
struct CameraModel {
    gain: [f64; 3],
    shift: f64,
    background: [f64; 3],
}

impl CameraModel {
    fn sample(rng: &mut Rng) -> Self {
        let base: f64 = rng.gen_range(40.0..120.0);
        Self {
            gain: std::array::from_fn(|_| rng.gen_range(0.9..1.1)),
            shift: rng.gen_range(-12.0..12.0),
            background: std::array::from_fn(|_| base + rng.gen_range(-10.0..10.0)),
        }
    }
}

/// Renders one image of `look` seen by `camera`, with translation jitter of
/// at most 2 px and per-channel Gaussian noise (σ = 4).
fn render(look: &Appearance, camera: &CameraModel, w: usize, h: usize, rng: &mut Rng) -> ImageRgb {
    let dx = rng.gen_range(-2i64..=2);
    let dy = rng.gen_range(-2i64..=2);
    let noise = Normal::new(0.0, 4.0).expect("valid sigma");
    let (wf, hf) = (w as f64, h as f64);
    let head = (0.04 * hf, 0.16 * hf);
    let torso_end = head.1 + look.torso_fraction * 0.80 * hf;
    let legs_end = 0.96 * hf;
    let mut img = ImageRgb::filled(w, h, [0, 0, 0]).expect("positive dimensions");
    for y in 0..h {
        for x in 0..w {
            // body coordinates after jitter
            let bx = (x as i64 - dx) as f64 + 0.5;
            let by = (y as i64 - dy) as f64 + 0.5;
            let off = (bx - wf / 2.0).abs() / wf;
            let colour = if by >= head.0 && by < head.1 && off < 0.15 {
                look.skin_rgb
            } else if by >= head.1 && by < torso_end && off < 0.32 {
                look.torso_rgb
            } else if by >= torso_end && by < legs_end && off < 0.25 {
                look.legs_rgb
            } else {
                camera.background
            };
            let rgb = std::array::from_fn(|ch| {
                let v = colour[ch] * camera.gain[ch] + camera.shift + noise.sample(rng);
                clamp_round_channel(v).expect("finite")
            });
            img.set_pixel(x, y, rgb);
        }
    }
    img
}

/// Output of [`synth_generate`]: the manifest plus in-memory images, indexed
/// like [`DatasetManifest::image_paths`].
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageRgb>,
    pub appearances: Vec<Appearance>,
}

/// Generates a synthetic dataset in memory. Identities `1..=n_train` form the
/// training split; every other identity has one seeded camera designated as
/// its query camera, and its remaining cameras form the gallery.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthDataset, DatasetError> {
    let SynthConfig {
        n_ids,
        n_cameras,
        imgs_per_pair,
        width,
        height,
        seed,
        train_fraction,
        cardinalities,
    } = config.clone();
    if n_cameras < 2 {
        return Err(DatasetError::InvalidSynth(format!(
            "need at least 2 cameras for a query/gallery split, got {n_cameras}"
        )));
    }
    if n_ids < 2 {
        return Err(DatasetError::InvalidSynth(format!("need at least 2 identities, got {n_ids}")));
    }
    if imgs_per_pair == 0 || width == 0 || height == 0 {
        return Err(DatasetError::InvalidSynth("image counts and sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(DatasetError::InvalidSynth(format!("train_fraction {train_fraction} outside [0, 1]")));
    }
    if cardinalities.gender != 2 || cardinalities.age_groups == 0 || cardinalities.ethnicities == 0 {
        return Err(DatasetError::InvalidSynth("synthetic gender is binary; other cardinalities must be positive".into()));
    }
    let n_train = (n_ids as f64 * train_fraction).floor() as usize;

    let mut latent_rng = rng_from_seed(derive_seed_str(seed, "synth/latent"));
    let cameras: Vec<CameraModel> = (0..n_cameras).map(|_| CameraModel::sample(&mut latent_rng)).collect();
    let appearances: Vec<Appearance> = (0..n_ids).map(|_| Appearance::sample(&mut latent_rng)).collect();
    let query_cams: Vec<usize> = (0..n_ids).map(|_| latent_rng.gen_range(0..n_cameras)).collect();

    let mut render_rng = rng_from_seed(derive_seed_str(seed, "synth/render"));
    let mut persons = Vec::new();
    let mut attributes = Vec::new();
    let mut images = Vec::new();
    for (idx, look) in appearances.iter().enumerate() {
        let person_id = idx as u32 + 1;
        let is_train = idx < n_train;
        for (cam_idx, camera) in cameras.iter().enumerate() {
            let split = if is_train {
                Split::Train
            } else if cam_idx == query_cams[idx] {
                Split::Query
            } else {
                Split::Gallery
            };
            for k in 0..imgs_per_pair {
                let image_path = PathBuf::from("images").join(format!(
                    "{person_id:04}_c{}s1_{k:06}_00.ppm",
                    cam_idx + 1
                ));
                images.push(render(look, camera, width, height, &mut render_rng));
                persons.push(PersonRecord {
                    image_path: image_path.clone(),
                    person_id,
                    camera_id: cam_idx as u32 + 1,
                    split,
                });
                attributes.push(AttributeRecord {
                    image_path,
                    gender: look.gender(),
                    age_group: look.age_group(cardinalities.age_groups),
                    ethnicity: look.ethnicity(cardinalities.ethnicities),
                    split: None,
                });
            }
        }
    }
    let manifest = DatasetManifest {
        root: PathBuf::new(),
        width,
        height,
        persons,
        attributes,
        cardinalities,
    };
    Ok(SynthDataset {
        manifest,
        images,
        appearances,
    })
}

/// Writes a generated dataset under `root`: `images/*.ppm`, `persons.csv` and
/// `attributes.csv`. Returns the manifest rooted at `root`.
pub fn write_dataset(root: &Path, synth: &SynthDataset) -> Result<DatasetManifest, DatasetError> {
    let mut manifest = synth.manifest.clone();
    manifest.root = root.to_path_buf();
    for (rel, img) in manifest.image_paths().iter().zip(&synth.images) {
        let path = root.join(rel);
        let io = |source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(&path, save_ppm(img)).map_err(io)?;
    }
    write_person_csv(&root.join(PERSONS_CSV), &manifest.persons)?;
    write_attribute_csv(&root.join(ATTRIBUTES_CSV), &manifest.attributes)?;
    Ok(manifest)
}

/// Loads all images of a manifest, in [`DatasetManifest::image_paths`] order.
pub fn load_images(manifest: &DatasetManifest) -> Result<Vec<ImageRgb>, DatasetError> {
    manifest
        .image_paths()
        .iter()
        .map(|rel| Ok(load_image_file(&manifest.resolve(rel))?))
        .collect()
}

/// Randomly assigns attribute records without an explicit split: roughly
/// `train_fraction` of them go to training.
pub fn assign_attribute_splits(records: &mut [AttributeRecord], train_fraction: f64, seed: u64) {
    let mut rng = rng_from_seed(derive_seed_str(seed, "attribute-split"));
    let mut missing: Vec<usize> = (0..records.len()).filter(|&i| records[i].split.is_none()).collect();
    missing.shuffle(&mut rng);
    let n_train = (missing.len() as f64 * train_fraction).round() as usize;
    for (rank, &i) in missing.iter().enumerate() {
        records[i].split = Some(if rank < n_train { AttrSplit::Train } else { AttrSplit::Eval });
    }
}
