//! Result files.
//!
//! CSV columns, in order: `p, repetition, accuracy, dtype, start_bit,
//! targets, seed, wall_time_ms`. Summaries are a JSON array with one object
//! per curve.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::CurveSummary;

pub const CSV_COLUMNS: [&str; 8] = [
    "p",
    "repetition",
    "accuracy",
    "dtype",
    "start_bit",
    "targets",
    "seed",
    "wall_time_ms",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub repetition: usize,
    pub accuracy: f64,
    pub dtype: String,
    pub start_bit: u32,
    pub targets: String,
    pub seed: u64,
    pub wall_time_ms: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::load(path, format!("{other:?}")),
    }
}

pub fn write_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)
            .map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(Error::load(
            path,
            format!(
                "unexpected CSV columns {:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        ));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

pub fn write_summaries(path: &Path, summaries: &[CurveSummary]) -> Result<()> {
    write_json(path, &summaries)
}

pub fn read_summaries(path: &Path) -> Result<Vec<CurveSummary>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("summaries serialise");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
