//! Output files. Everything is rendered in memory and then written with
//! [`write_atomic`].

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use sdm_core::{DomainDataset, OpCounters, RoundMetrics};

use crate::config::RunConfig;

/// Writes to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over every row (domain, label, feature bits) in export order, so
/// it ignores annotation state and CSV formatting.
pub fn dataset_fingerprint(dataset: &DomainDataset) -> String {
    let mut h = Sha256::new();
    h.update((dataset.classes() as u64).to_le_bytes());
    h.update((dataset.dim() as u64).to_le_bytes());
    for row in dataset.export_rows() {
        h.update(row.domain.name().as_bytes());
        h.update([0]);
        h.update((row.label as u64).to_le_bytes());
        for v in row.features {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex(&h.finalize())
}

pub fn csv_bytes<S: Serialize>(rows: &[S]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// One `rounds.csv` row. `op_count` is the number of scalar multiply-adds
/// spent scoring the pool in that round.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RoundRow {
    pub round: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
    pub query_time_s: f64,
    pub op_count: u64,
}

impl From<&RoundMetrics> for RoundRow {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round_index,
            labeled_count: m.labeled_target_count,
            accuracy: m.target_test_accuracy,
            query_time_s: m.query_wall_time,
            op_count: m.op_counters.mul_adds(),
        }
    }
}

pub fn rounds_csv(metrics: &[RoundMetrics]) -> anyhow::Result<Vec<u8>> {
    let rows: Vec<RoundRow> = metrics.iter().map(RoundRow::from).collect();
    csv_bytes(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterRecord {
    pub dot_products: u64,
    pub weight_mul_adds: u64,
    pub vector_mul_adds: u64,
    pub comparisons: u64,
}

impl From<OpCounters> for CounterRecord {
    fn from(c: OpCounters) -> Self {
        Self {
            dot_products: c.dot_products,
            weight_mul_adds: c.weight_mul_adds,
            vector_mul_adds: c.vector_mul_adds,
            comparisons: c.comparisons,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
    pub source_margin_fraction: Option<f64>,
    pub query_time_s: f64,
    pub op_counters: CounterRecord,
    pub selected: Vec<usize>,
}

impl From<&RoundMetrics> for RoundRecord {
    fn from(m: &RoundMetrics) -> Self {
        Self {
            round: m.round_index,
            labeled_count: m.labeled_target_count,
            accuracy: m.target_test_accuracy,
            source_margin_fraction: m.source_margin_fraction,
            query_time_s: m.query_wall_time,
            op_counters: m.op_counters.into(),
            selected: m.selected.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetRecord {
    pub fingerprint: String,
    pub classes: usize,
    pub dim: usize,
    pub source: usize,
    pub target_pool: usize,
    pub target_test: usize,
}

impl DatasetRecord {
    pub fn of(dataset: &DomainDataset) -> Self {
        Self {
            fingerprint: dataset_fingerprint(dataset),
            classes: dataset.classes(),
            dim: dataset.dim(),
            source: dataset.source().len(),
            target_pool: dataset.pool_len(),
            target_test: dataset.target_test().len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub source_only_accuracy: f64,
    pub final_accuracy: f64,
    pub labeled_count: usize,
    pub sampling_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub dataset: DatasetRecord,
    pub rounds: Vec<RoundRecord>,
    pub summary: Summary,
}

impl RunManifest {
    /// `dataset` must be the dataset as it was before the run.
    pub fn new(config: RunConfig, dataset: &DomainDataset, metrics: &[RoundMetrics]) -> Self {
        let first = metrics.first();
        let last = metrics.last();
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            dataset: DatasetRecord::of(dataset),
            rounds: metrics.iter().map(RoundRecord::from).collect(),
            summary: Summary {
                source_only_accuracy: first.map_or(0.0, |m| m.target_test_accuracy),
                final_accuracy: last.map_or(0.0, |m| m.target_test_accuracy),
                labeled_count: last.map_or(0, |m| m.labeled_target_count),
                sampling_rounds: metrics.len().saturating_sub(1),
            },
        }
    }
}

pub fn json_bytes<S: Serialize>(value: &S) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
