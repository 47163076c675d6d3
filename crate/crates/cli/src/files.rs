//! On-disk formats: graphs, models, ground truth, run and metrics records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tgx_core::explainer::{ExplainerConfig, ExplanationRun, OracleResult};
use tgx_core::graph::{read_event_csv, read_snapshot_csv, write_event_csv, write_snapshot_csv, DynamicGraph, GraphMode};
use tgx_core::models::{AnyModel, TrainReport};
use tgx_core::synth::GroundTruth;

use crate::UsageError;

pub fn read_graph(path: &Path, mode: GraphMode) -> Result<DynamicGraph> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let reader = BufReader::new(file);
    let graph = match mode {
        GraphMode::Event => DynamicGraph::Event(read_event_csv(reader)?),
        GraphMode::Snapshot => DynamicGraph::Snapshot(read_snapshot_csv(reader)?),
    };
    Ok(graph)
}

pub fn write_graph(path: &Path, graph: &DynamicGraph) -> Result<()> {
    let out = create(path)?;
    match graph {
        DynamicGraph::Event(g) => write_event_csv(g, out)?,
        DynamicGraph::Snapshot(g) => write_snapshot_csv(g, out)?,
    }
    Ok(())
}

pub fn read_model(path: &Path) -> Result<AnyModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(AnyModel::from_json(&text)?)
}

pub fn write_model(path: &Path, model: &AnyModel) -> Result<()> {
    write_text(path, &model.to_json()?)
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed JSON in {}", path.display()))
}

/// Reads a JSON config, reporting malformed documents as usage errors.
pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("malformed config {}: {e}", path.display())).into())
}

const TRUTH_HEADER: [&str; 10] = [
    "src", "dst", "timestamp", "hub", "causal_src", "causal_dst", "causal_t", "support_src", "support_dst", "support_t",
];

/// One row per planted link, nodes written with the graph's labels.
pub fn write_truth(path: &Path, truth: &[GroundTruth], graph: &DynamicGraph) -> Result<()> {
    let l = |v| graph.label(v);
    let mut out = csv::Writer::from_writer(create(path)?);
    out.write_record(TRUTH_HEADER)?;
    for g in truth {
        out.write_record([
            l(g.edge.src),
            l(g.edge.dst),
            g.edge.t.to_string(),
            l(g.hub),
            l(g.causal.src),
            l(g.causal.dst),
            g.causal.t.to_string(),
            l(g.support.src),
            l(g.support.dst),
            g.support.t.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Raw ground-truth rows as written by [`write_truth`].
pub fn read_truth(path: &Path) -> Result<Vec<[String; 10]>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    if reader.headers()?.iter().collect::<Vec<_>>() != TRUTH_HEADER {
        bail!("{} is not a ground-truth file", path.display());
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row: Vec<String> = rec.iter().map(str::to_string).collect();
        rows.push(row.try_into().map_err(|_| anyhow::anyhow!("short ground-truth row"))?);
    }
    Ok(rows)
}

/// One explained instance; `labels` are the endpoints as written in the
/// input data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRun {
    pub labels: [String; 2],
    pub run: ExplanationRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub mode: GraphMode,
    pub data: String,
    pub model: String,
    pub config: ExplainerConfig,
    pub runs: Vec<InstanceRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub labels: [String; 2],
    pub fid_plus: f64,
    pub best_fid_plus: f64,
    pub aufsc: f64,
    pub cohesiveness: Option<f64>,
    pub explanation_size: usize,
    pub epochs: usize,
}

/// Metrics averaged over instances; `best_fid_plus` is taken on the mean
/// curve, `cohesiveness` over instances where it is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub fid_plus: f64,
    pub best_fid_plus: f64,
    pub aufsc: f64,
    pub cohesiveness: Option<f64>,
    pub curve: Vec<[f64; 2]>,
    pub delta_t: f64,
    pub instances: Vec<InstanceMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub best_fid_plus: f64,
    pub fid_plus: f64,
    pub aufsc: f64,
    pub mean_explanation_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    pub param: String,
    pub instances: usize,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFile {
    pub labels: [String; 2],
    pub k_sub: usize,
    pub oracle: OracleResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFile {
    pub mode: GraphMode,
    pub data: String,
    pub report: TrainReport,
}
