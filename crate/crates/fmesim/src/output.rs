//! Result files. Nothing written here depends on wall-clock time.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use fmesim_core::fme::trace::TraceRecord;
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::experiments::{Fig6Summary, Fig7Row, Fig7Summary, ThroughputRow};

pub const THROUGHPUT_CSV: &str = "throughput.csv";
pub const D2D_CSV: &str = "d2d.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TRACE_CSV: &str = "trace.csv";

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub seed: u64,
    pub config: &'a ScenarioConfig,
    pub fig6: Option<Fig6Summary>,
    pub fig7: Option<Fig7Summary>,
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_throughput(dir: &Path, rows: &[ThroughputRow]) -> io::Result<PathBuf> {
    let path = dir.join(THROUGHPUT_CSV);
    write_rows(&path, rows)?;
    Ok(path)
}

pub fn write_d2d(dir: &Path, rows: &[Fig7Row]) -> io::Result<PathBuf> {
    let path = dir.join(D2D_CSV);
    write_rows(&path, rows)?;
    Ok(path)
}

#[derive(Serialize)]
struct TraceRow<'a> {
    time_us: u64,
    node: String,
    kind: &'a str,
    detail: String,
}

pub fn write_trace(dir: &Path, trace: &[TraceRecord]) -> io::Result<PathBuf> {
    let path = dir.join(TRACE_CSV);
    let rows: Vec<TraceRow> = trace
        .iter()
        .map(|r| TraceRow { time_us: r.time.as_us(), node: r.node.to_string(), kind: r.kind, detail: r.detail() })
        .collect();
    write_rows(&path, &rows)?;
    Ok(path)
}

pub fn write_summary(dir: &Path, summary: &Summary) -> io::Result<PathBuf> {
    let path = dir.join(SUMMARY_JSON);
    let mut text = serde_json::to_string_pretty(summary).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}
