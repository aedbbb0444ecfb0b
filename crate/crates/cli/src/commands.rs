//! Subcommand implementations. Each writes its artifacts plus `run.json`
//! (command, seed and resolved configuration) into the output directory.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use epsimage::dataset::{
    self, load_dataset_dir, load_images, synth_generate, write_attribute_csv, write_person_csv, ATTRIBUTES_CSV,
    PERSONS_CSV,
};
use epsimage::dp::{self, Epsilon, Sensitivity};
use epsimage::embedding::LinearEmbedder;
use epsimage::experiment::{self, Cell, CellResult, LoadedDataset};
use epsimage::raster::save_ppm;
use epsimage::report::{
    self, render_attr_table, render_reid_table, write_attr_csv, write_loss_trace, write_reid_csv, AttrRow, ReidRow,
};
use epsimage::retrieval::Mode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::config::RunConfig;
use crate::CliError;

pub const RUN_JSON: &str = "run.json";
pub const CHECKPOINT: &str = "embedder.ckpt";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const REID_REPORT: &str = "reid_report.csv";
pub const ATTR_REPORT: &str = "attr_report.csv";
pub const SWEEP_REID: &str = "sweep_reid.csv";
pub const SWEEP_ATTR: &str = "sweep_attr.csv";
pub const SWEEP_ERRORS: &str = "errors.csv";
pub const TABLES: &str = "tables.txt";

/// Obfuscation parameters recorded next to an obfuscated dataset, so later
/// reports can label their rows with ε, b and c.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub epsilon: Epsilon,
    pub b: usize,
    pub c: u32,
    pub strict: bool,
    pub quantise_midpoint: bool,
    pub sensitivity: Option<f64>,
    pub strict_sensitivity: Option<f64>,
    pub noise_scale: Option<f64>,
}

impl Provenance {
    fn clean() -> Self {
        Self {
            epsilon: Epsilon::Disabled,
            b: 1,
            c: 1,
            strict: false,
            quantise_midpoint: false,
            sensitivity: None,
            strict_sensitivity: None,
            noise_scale: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RunRecord<T> {
    command: String,
    seed: u64,
    config: RunConfig,
    details: T,
}

pub fn dispatch(command: &Command, config: &RunConfig, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    match command {
        Command::Synth(_) => synth(config, out),
        Command::Obfuscate(_) => obfuscate(config, out),
        Command::Train(_) => train(config, out),
        Command::EvalReid(a) => eval_reid(config, a.checkpoint.as_deref(), out),
        Command::EvalAttr(_) => eval_attr(config, out),
        Command::Sweep(_) => sweep(config, out),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_run_json<T: Serialize>(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &RunConfig,
    details: T,
) -> Result<(), CliError> {
    let record = RunRecord {
        command: command.to_string(),
        seed,
        config: config.clone(),
        details,
    };
    let mut text = serde_json::to_string_pretty(&record).map_err(CliError::runtime)?;
    text.push('\n');
    write_file(&dir.join(RUN_JSON), text)
}

fn dataset_root(config: &RunConfig) -> Result<&Path, CliError> {
    config
        .dataset
        .as_deref()
        .ok_or_else(|| CliError::Config("--dataset is required".into()))
}

pub fn load_dataset(root: &Path, config: &RunConfig) -> Result<LoadedDataset, CliError> {
    if !root.is_dir() {
        return Err(CliError::Runtime(format!("{}: not a dataset directory", root.display())));
    }
    let manifest = load_dataset_dir(root, config.cardinalities()).map_err(CliError::runtime)?;
    let images = load_images(&manifest).map_err(CliError::runtime)?;
    LoadedDataset::new(manifest, images).map_err(CliError::runtime)
}

/// Reads the obfuscation record of a dataset, or the noise-free defaults
/// when the dataset was never obfuscated.
pub fn read_provenance(root: &Path) -> Result<Provenance, CliError> {
    let path = root.join(RUN_JSON);
    if !path.exists() {
        return Ok(Provenance::clean());
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if value.get("command").and_then(|c| c.as_str()) != Some("obfuscate") {
        return Ok(Provenance::clean());
    }
    serde_json::from_value(value["details"].clone()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn synth(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let synth = synth_generate(&config.synth_config()).map_err(|e| CliError::Config(e.to_string()))?;
    dataset::write_dataset(out, &synth).map_err(CliError::runtime)?;
    write_run_json(
        out,
        "synth",
        config.seed,
        config,
        serde_json::json!({
            "images": synth.images.len(),
            "persons": synth.manifest.persons.len(),
            "attributes": synth.manifest.attributes.len(),
        }),
    )
}

fn is_ppm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

fn obfuscate(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let root = dataset_root(config)?;
    let data = load_dataset(root, config)?;
    let params = config.privacy_params()?;
    let (w, h) = (data.manifest.width, data.manifest.height);
    let sens = params.sensitivity(w, h).map_err(|e| CliError::Config(e.to_string()))?;
    let scale = params
        .noise_scale(w, h)
        .map_err(|e| CliError::Config(e.to_string()))?
        .map(|s| s.get());
    let noised = experiment::obfuscate_dataset(&data, &params, config.seed).map_err(CliError::runtime)?;

    // PPM inputs keep their paths; other formats are re-encoded as PPM and
    // the manifests are rewritten to match.
    let paths = noised.manifest.image_paths();
    let all_ppm = paths.iter().all(|p| is_ppm(p));
    let out_path = |rel: &Path| if is_ppm(rel) { rel.to_path_buf() } else { rel.with_extension("ppm") };
    for (rel, img) in paths.iter().zip(&noised.images) {
        let path = out.join(out_path(rel));
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        write_file(&path, save_ppm(img))?;
    }
    for (name, present) in [
        (PERSONS_CSV, !noised.manifest.persons.is_empty()),
        (ATTRIBUTES_CSV, !noised.manifest.attributes.is_empty()),
    ] {
        let src = root.join(name);
        if !present {
            continue;
        }
        if all_ppm && src.exists() {
            fs::copy(&src, out.join(name)).map_err(|e| CliError::Runtime(format!("{}: {e}", src.display())))?;
        } else if name == PERSONS_CSV {
            let mut records = noised.manifest.persons.clone();
            records.iter_mut().for_each(|r| r.image_path = out_path(&r.image_path));
            write_person_csv(&out.join(name), &records).map_err(CliError::runtime)?;
        } else {
            let mut records = noised.manifest.attributes.clone();
            records.iter_mut().for_each(|r| r.image_path = out_path(&r.image_path));
            write_attribute_csv(&out.join(name), &records).map_err(CliError::runtime)?;
        }
    }
    let provenance = Provenance {
        epsilon: config.epsilon,
        b: config.b,
        c: config.c,
        strict: config.strict,
        quantise_midpoint: config.quantise_midpoint,
        sensitivity: Some(sens.delta_f),
        strict_sensitivity: Some(sens.strict_delta_f),
        noise_scale: scale,
    };
    write_run_json(out, "obfuscate", config.seed, config, provenance)
}

fn train(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = load_dataset(dataset_root(config)?, config)?;
    let outcome = experiment::train_reid(&data, &config.reid_config()?, config.seed).map_err(CliError::runtime)?;
    outcome
        .embedder
        .write_checkpoint(create_file(&out.join(CHECKPOINT))?)
        .map_err(CliError::runtime)?;
    write_loss_trace(create_file(&out.join(LOSS_TRACE))?, &outcome.loss_trace).map_err(CliError::runtime)?;
    write_run_json(
        out,
        "train",
        config.seed,
        config,
        serde_json::json!({
            "epochs": outcome.loss_trace.len(),
            "first_loss": outcome.loss_trace.first(),
            "final_loss": outcome.loss_trace.last(),
        }),
    )
}

fn reid_rows(metrics: &[epsimage::retrieval::Metrics; 2], p: &Provenance) -> Vec<ReidRow> {
    metrics
        .iter()
        .zip([Mode::Regular, Mode::Centroid])
        .map(|(m, mode)| ReidRow {
            mode,
            epsilon: p.epsilon,
            block: p.b,
            bin: p.c,
            map: m.map,
            top1: m.top1,
        })
        .collect()
}

fn eval_reid(config: &RunConfig, checkpoint: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let root = dataset_root(config)?;
    let provenance = read_provenance(root)?;
    let data = load_dataset(root, config)?;
    let embedder = match checkpoint {
        Some(path) => {
            let file = fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            LinearEmbedder::read_checkpoint(BufReader::new(file)).map_err(CliError::runtime)?
        }
        None => {
            let outcome =
                experiment::train_reid(&data, &config.reid_config()?, config.seed).map_err(CliError::runtime)?;
            write_loss_trace(create_file(&out.join(LOSS_TRACE))?, &outcome.loss_trace).map_err(CliError::runtime)?;
            outcome.embedder
        }
    };
    let metrics = experiment::evaluate_reid(&data, &embedder, config.camera_aware).map_err(CliError::runtime)?;
    write_reid_csv(create_file(&out.join(REID_REPORT))?, &reid_rows(&metrics, &provenance)).map_err(CliError::runtime)?;
    write_run_json(
        out,
        "eval-reid",
        config.seed,
        config,
        serde_json::json!({
            "checkpoint": checkpoint,
            "provenance": provenance,
            "valid_queries": metrics[0].valid_queries,
            "skipped_queries": metrics[0].skipped_queries,
        }),
    )
}

fn eval_attr(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let root = dataset_root(config)?;
    let provenance = read_provenance(root)?;
    let data = load_dataset(root, config)?;
    let results =
        experiment::evaluate_attributes(&data, &config.attr_config()?, config.seed).map_err(CliError::runtime)?;
    let rows: Vec<AttrRow> = results
        .iter()
        .map(|r| AttrRow {
            task: r.task,
            epsilon: provenance.epsilon,
            block: provenance.b,
            bin: provenance.c,
            accuracy: r.accuracy,
            chance_uniform: r.chance_uniform,
            chance_majority: r.chance_majority,
        })
        .collect();
    write_attr_csv(create_file(&out.join(ATTR_REPORT))?, &rows).map_err(CliError::runtime)?;
    write_run_json(out, "eval-attr", config.seed, config, serde_json::json!({ "provenance": provenance }))
}

#[derive(Serialize)]
struct CellDetails<'a> {
    cell: String,
    epsilon: Epsilon,
    b: usize,
    c: u32,
    sensitivity: &'a Sensitivity,
    noise_scale: Option<f64>,
}

fn write_cell(dir: &Path, config: &RunConfig, result: &CellResult) -> Result<(), CliError> {
    create_dir(dir)?;
    write_reid_csv(create_file(&dir.join(REID_REPORT))?, &result.reid).map_err(CliError::runtime)?;
    write_attr_csv(create_file(&dir.join(ATTR_REPORT))?, &result.attributes).map_err(CliError::runtime)?;
    write_loss_trace(create_file(&dir.join(LOSS_TRACE))?, &result.reid_loss_trace).map_err(CliError::runtime)?;
    write_run_json(
        dir,
        "sweep-cell",
        result.seed,
        config,
        CellDetails {
            cell: result.cell.key(),
            epsilon: result.cell.epsilon,
            b: result.cell.block,
            c: result.cell.bin,
            sensitivity: &result.sensitivity,
            noise_scale: result.noise_scale,
        },
    )
}

/// Directory holding one sweep cell's artifacts.
pub fn cell_dir(out: &Path, cell: &Cell) -> PathBuf {
    out.join("cells").join(cell.key())
}

const META_COLUMNS: [&str; 4] = ["seed", "delta_f", "strict_delta_f", "noise_scale"];

fn meta_fields(result: &CellResult) -> Vec<String> {
    vec![
        result.seed.to_string(),
        result.sensitivity.delta_f.to_string(),
        result.sensitivity.strict_delta_f.to_string(),
        result.noise_scale.map(|s| s.to_string()).unwrap_or_else(|| "none".into()),
    ]
}

fn write_consolidated(
    path: &Path,
    header: &[&str],
    results: &[&CellResult],
    rows: impl Fn(&CellResult) -> Vec<Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    let full: Vec<&str> = header.iter().chain(META_COLUMNS.iter()).copied().collect();
    w.write_record(&full).map_err(CliError::runtime)?;
    for r in results {
        for mut fields in rows(r) {
            fields.extend(meta_fields(r));
            w.write_record(&fields).map_err(CliError::runtime)?;
        }
    }
    w.flush().map_err(CliError::runtime)
}

fn sweep(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = match &config.dataset {
        Some(root) => load_dataset(root, config)?,
        None => {
            let root = out.join("dataset");
            let synth = synth_generate(&config.synth_config()).map_err(|e| CliError::Config(e.to_string()))?;
            let manifest = dataset::write_dataset(&root, &synth).map_err(CliError::runtime)?;
            LoadedDataset::new(manifest, synth.images).map_err(CliError::runtime)?
        }
    };
    let (w, h) = (data.manifest.width, data.manifest.height);
    let reid = config.reid_config()?;
    let attr = config.attr_config()?;
    let flags = config.flags();
    let cells = config.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(CliError::runtime)?;
    let outcomes: Vec<Result<CellResult, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let seed = cell.seed(config.seed);
                let result = experiment::run_cell(&data, *cell, seed, &reid, &attr, &flags).map_err(|e| e.to_string())?;
                write_cell(&cell_dir(out, cell), config, &result).map_err(|e| e.to_string())?;
                Ok(result)
            })
            .collect()
    });

    let ok: Vec<&CellResult> = outcomes.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures: Vec<(String, &String)> = cells
        .iter()
        .zip(&outcomes)
        .filter_map(|(cell, r)| r.as_ref().err().map(|e| (cell.key(), e)))
        .collect();

    write_consolidated(&out.join(SWEEP_REID), &report::REID_HEADER, &ok, |r| {
        r.reid.iter().map(ReidRow::fields).collect()
    })?;
    write_consolidated(&out.join(SWEEP_ATTR), &report::ATTR_HEADER, &ok, |r| {
        r.attributes.iter().map(AttrRow::fields).collect()
    })?;
    let mut errors = csv::Writer::from_writer(create_file(&out.join(SWEEP_ERRORS))?);
    errors.write_record(["cell", "error"]).map_err(CliError::runtime)?;
    for (key, msg) in &failures {
        errors.write_record([key.as_str(), msg.as_str()]).map_err(CliError::runtime)?;
    }
    errors.flush().map_err(CliError::runtime)?;

    let reid_rows: Vec<ReidRow> = ok.iter().flat_map(|r| r.reid.iter().cloned()).collect();
    let attr_rows: Vec<AttrRow> = ok.iter().flat_map(|r| r.attributes.iter().cloned()).collect();
    let mut tables = String::new();
    for &(b, c) in &config.grid {
        let sens = dp::sensitivity(w, h, b, c).map_err(|e| CliError::Config(e.to_string()))?;
        if !reid_rows.is_empty() {
            tables.push_str(&render_reid_table(b, c, &sens, &reid_rows));
            tables.push('\n');
        }
        if !attr_rows.is_empty() {
            tables.push_str(&render_attr_table(b, c, &sens, &attr_rows));
            tables.push('\n');
        }
    }
    write_file(&out.join(TABLES), tables)?;
    write_run_json(
        out,
        "sweep",
        config.seed,
        config,
        serde_json::json!({
            "cells": cells.iter().map(Cell::key).collect::<Vec<_>>(),
            "failed": failures.iter().map(|(k, _)| k).collect::<Vec<_>>(),
        }),
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} of {} sweep cells failed; see {}",
            failures.len(),
            cells.len(),
            out.join(SWEEP_ERRORS).display()
        )))
    }
}
