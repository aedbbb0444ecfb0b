//! Report rows, CSV encodings and plain-text tables.

use std::fmt::Write as _;
use std::io::Write;

use crate::dataset::Task;
use crate::dp::{Epsilon, Sensitivity};
use crate::retrieval::Mode;

pub const REID_HEADER: [&str; 6] = ["mode", "epsilon", "b", "c", "mAP", "top1"];
pub const ATTR_HEADER: [&str; 7] = ["task", "epsilon", "b", "c", "accuracy", "chance_uniform", "chance_majority"];

/// One re-identification result; percentages in `[0, 100]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReidRow {
    pub mode: Mode,
    pub epsilon: Epsilon,
    pub block: usize,
    pub bin: u32,
    pub map: f64,
    pub top1: f64,
}

impl ReidRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.mode.to_string(),
            self.epsilon.to_string(),
            self.block.to_string(),
            self.bin.to_string(),
            pct(self.map),
            pct(self.top1),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttrRow {
    pub task: Task,
    pub epsilon: Epsilon,
    pub block: usize,
    pub bin: u32,
    pub accuracy: f64,
    pub chance_uniform: f64,
    pub chance_majority: f64,
}

impl AttrRow {
    pub fn fields(&self) -> Vec<String> {
        vec![
            self.task.to_string(),
            self.epsilon.to_string(),
            self.block.to_string(),
            self.bin.to_string(),
            pct(self.accuracy),
            pct(self.chance_uniform),
            pct(self.chance_majority),
        ]
    }
}

pub fn pct(v: f64) -> String {
    format!("{v:.2}")
}

pub fn write_reid_csv<W: Write>(out: W, rows: &[ReidRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REID_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_attr_csv<W: Write>(out: W, rows: &[AttrRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ATTR_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_trace<W: Write>(out: W, trace: &[f64]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "mean_loss"])?;
    for (epoch, loss) in trace.iter().enumerate() {
        w.write_record([(epoch + 1).to_string(), loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Caption line naming the grid point and both sensitivities.
pub fn caption(block: usize, bin: u32, sens: &Sensitivity) -> String {
    format!(
        "b={block}, c={bin}: Δf={} (strict Δf={})",
        sens.delta_f, sens.strict_delta_f
    )
}

/// Re-identification table for one (b, c): one row per ε, columns
/// Regular mAP/Top-1 and Centroid-based mAP/Top-1.
pub fn render_reid_table(block: usize, bin: u32, sens: &Sensitivity, rows: &[ReidRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{}", caption(block, bin, sens)).unwrap();
    writeln!(s, "{:>10} | {:^17} | {:^17}", "", "Regular", "Centroid-based").unwrap();
    writeln!(s, "{:>10} | {:>8} {:>8} | {:>8} {:>8}", "ε", "mAP%", "Top-1%", "mAP%", "Top-1%").unwrap();
    let mut eps: Vec<Epsilon> = Vec::new();
    for r in rows.iter().filter(|r| r.block == block && r.bin == bin) {
        if !eps.contains(&r.epsilon) {
            eps.push(r.epsilon);
        }
    }
    for e in eps {
        let find = |mode| rows.iter().find(|r| r.block == block && r.bin == bin && r.epsilon == e && r.mode == mode);
        let cellpair = |r: Option<&ReidRow>| match r {
            Some(r) => format!("{:>8.1} {:>8.1}", r.map, r.top1),
            None => format!("{:>8} {:>8}", "-", "-"),
        };
        writeln!(
            s,
            "{:>10} | {} | {}",
            e.to_string(),
            cellpair(find(Mode::Regular)),
            cellpair(find(Mode::Centroid))
        )
        .unwrap();
    }
    s
}

/// Attribute accuracy table for one (b, c): one row per ε, one column per
/// task, followed by the uniform chance row.
pub fn render_attr_table(block: usize, bin: u32, sens: &Sensitivity, rows: &[AttrRow]) -> String {
    let rows: Vec<&AttrRow> = rows.iter().filter(|r| r.block == block && r.bin == bin).collect();
    let mut tasks: Vec<Task> = Vec::new();
    let mut eps: Vec<Epsilon> = Vec::new();
    for r in &rows {
        if !tasks.contains(&r.task) {
            tasks.push(r.task);
        }
        if !eps.contains(&r.epsilon) {
            eps.push(r.epsilon);
        }
    }
    let mut s = String::new();
    writeln!(s, "{}", caption(block, bin, sens)).unwrap();
    write!(s, "{:>10} |", "ε").unwrap();
    for t in &tasks {
        write!(s, " {:>10}", t.to_string()).unwrap();
    }
    s.push('\n');
    for e in &eps {
        write!(s, "{:>10} |", e.to_string()).unwrap();
        for t in &tasks {
            match rows.iter().find(|r| r.task == *t && r.epsilon == *e) {
                Some(r) => write!(s, " {:>10.1}", r.accuracy).unwrap(),
                None => write!(s, " {:>10}", "-").unwrap(),
            }
        }
        s.push('\n');
    }
    write!(s, "{:>10} |", "chance").unwrap();
    for t in &tasks {
        match rows.iter().find(|r| r.task == *t) {
            Some(r) => write!(s, " {:>10.1}", r.chance_uniform).unwrap(),
            None => write!(s, " {:>10}", "-").unwrap(),
        }
    }
    s.push('\n');
    s
}
