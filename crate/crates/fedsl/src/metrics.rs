//! Per-round metrics rows and CSV emission.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One evaluation record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub framework: String,
    pub seed: u64,
    /// Sweep axis value; `None` outside sweeps.
    pub axis_value: Option<f64>,
    pub round: u64,
    pub sim_time_s: f64,
    pub train_loss: f64,
    pub test_acc: f64,
    pub bits_tx: u64,
    pub energy_j: f64,
    pub max_staleness: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn new() -> Self {
        MetricsTable { rows: Vec::new() }
    }

    /// Sorts rows by (framework, seed, axis_value, round).
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.framework
                .cmp(&b.framework)
                .then(a.seed.cmp(&b.seed))
                .then(cmp_axis(a.axis_value, b.axis_value))
                .then(a.round.cmp(&b.round))
        });
    }

    /// Canonical CSV serialization: stable header, shortest round-trip
    /// float formatting, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut sorted = self.clone();
        sorted.sort();
        let mut out = String::from(
            "framework,seed,axis_value,round,sim_time_s,train_loss,test_acc,bits_tx,energy_j,max_staleness\n",
        );
        for r in &sorted.rows {
            let axis = match r.axis_value {
                Some(v) => format!("{v}"),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.framework,
                r.seed,
                axis,
                r.round,
                r.sim_time_s,
                r.train_loss,
                r.test_acc,
                r.bits_tx,
                r.energy_j,
                r.max_staleness
            ));
        }
        out
    }
}

fn cmp_axis(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    }
}

/// Writes the table to `path` as CSV.
pub fn write_csv(table: &MetricsTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_csv()).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Parses a CSV produced by [`write_csv`] back into a table.
pub fn read_csv(text: &str) -> Result<MetricsTable> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::validation(format!("csv line {i}: {} fields", f.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::validation(format!("csv line {i}: bad float {s}")))
        };
        rows.push(MetricsRow {
            framework: f[0].to_string(),
            seed: f[1].parse().map_err(|_| Error::validation("bad seed"))?,
            axis_value: if f[2].is_empty() { None } else { Some(parse(f[2])?) },
            round: f[3].parse().map_err(|_| Error::validation("bad round"))?,
            sim_time_s: parse(f[4])?,
            train_loss: parse(f[5])?,
            test_acc: parse(f[6])?,
            bits_tx: f[7].parse().map_err(|_| Error::validation("bad bits"))?,
            energy_j: parse(f[8])?,
            max_staleness: f[9].parse().map_err(|_| Error::validation("bad staleness"))?,
        });
    }
    Ok(MetricsTable { rows })
}
