//! CSV outputs: training metrics, corpus statistics, and bucket plans.

use std::fs;
use std::path::Path;

use graphfm_core::graph::{graph_stats, Graph, GraphError};
use graphfm_core::sampler::Minibatch;
use graphfm_core::trainer::StepReport;
use serde::Serialize;

use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {:?}", path.display(), other)),
    }
}

/// Writes `rows` as a CSV file with a header row.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One metrics row: a dataset's mean query loss within one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub dataset: String,
    pub loss: f64,
    pub lr_trunk: f64,
    pub lr_dataset: f64,
    pub tokens_seen: u64,
}

pub fn metrics_rows(report: &StepReport, names: &[String]) -> Vec<MetricsRow> {
    report
        .per_dataset
        .iter()
        .map(|d| MetricsRow {
            step: report.step,
            dataset: names.get(d.dataset as usize).cloned().unwrap_or_else(|| format!("dataset-{}", d.dataset)),
            loss: if d.queries > 0 { d.loss_sum / d.queries as f64 } else { 0.0 },
            lr_trunk: report.lr_trunk,
            lr_dataset: d.lr,
            tokens_seen: report.tokens_seen,
        })
        .collect()
}

/// Append-only metrics CSV (the header is written only to a new file).
pub struct MetricsLog {
    path: std::path::PathBuf,
    w: csv::Writer<fs::File>,
}

impl MetricsLog {
    pub fn open(path: &Path, truncate: bool) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let fresh = truncate || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(!fresh)
            .truncate(fresh)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(MetricsLog { path: path.to_path_buf(), w })
    }

    pub fn write(&mut self, rows: &[MetricsRow]) -> Result<()> {
        for r in rows {
            self.w.serialize(r).map_err(|e| csv_err(&self.path, e))?;
        }
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// One row of the corpus summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsRow {
    pub dataset: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub avg_degree: f64,
    /// Empty when every node is isolated.
    pub homophily: Option<f64>,
    pub regime: Option<&'static str>,
}

pub fn stats_row(name: &str, g: &Graph) -> Result<StatsRow> {
    match graph_stats(g) {
        Ok(s) => Ok(StatsRow {
            dataset: name.into(),
            num_nodes: s.num_nodes,
            num_edges: s.num_edges,
            avg_degree: s.avg_degree,
            homophily: Some(s.homophily),
            regime: Some(s.regime.as_str()),
        }),
        Err(GraphError::UndefinedHomophily) => Ok(StatsRow {
            dataset: name.into(),
            num_nodes: g.num_nodes(),
            num_edges: g.num_edges(),
            avg_degree: 2.0 * g.num_edges() as f64 / g.num_nodes() as f64,
            homophily: None,
            regime: None,
        }),
        Err(e) => Err(e.into()),
    }
}

/// One slice of one bucket in a plan.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanRow {
    pub step: u64,
    pub worker: usize,
    pub bucket: usize,
    pub slice: usize,
    pub dataset: String,
    pub subgraph: usize,
    pub subgraph_size: usize,
    pub parent_size: usize,
    pub start: usize,
    pub len: usize,
    /// Buckets the slice's subgraph is spread over.
    pub split_count: usize,
}

/// Per-dataset share of planned nodes against its share of the corpus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShareRow {
    pub dataset: String,
    pub planned_nodes: usize,
    pub planned_share: f64,
    pub corpus_share: f64,
}

pub fn plan_rows(mbs: &[Minibatch], names: &[String]) -> Vec<PlanRow> {
    let mut rows = Vec::new();
    for mb in mbs {
        let splits = mb.plan.split_counts(mb.subgraphs.len());
        for (b, bucket) in mb.plan.buckets.iter().enumerate() {
            for (i, s) in bucket.iter().enumerate() {
                let sub = &mb.subgraphs[s.subgraph];
                rows.push(PlanRow {
                    step: mb.step,
                    worker: b / mb.accum,
                    bucket: b,
                    slice: i,
                    dataset: names[sub.parent].clone(),
                    subgraph: s.subgraph,
                    subgraph_size: sub.len(),
                    parent_size: sub.parent_size,
                    start: s.start,
                    len: s.len,
                    split_count: splits[s.subgraph],
                });
            }
        }
    }
    rows
}

pub fn share_rows(mbs: &[Minibatch], names: &[String], sizes: &[usize]) -> Vec<ShareRow> {
    let mut planned = vec![0usize; names.len()];
    for mb in mbs {
        for (d, c) in mb.nodes_per_dataset(names.len()).into_iter().enumerate() {
            planned[d] += c;
        }
    }
    let total_planned: usize = planned.iter().sum();
    let total: usize = sizes.iter().sum();
    names
        .iter()
        .enumerate()
        .map(|(d, name)| ShareRow {
            dataset: name.clone(),
            planned_nodes: planned[d],
            planned_share: planned[d] as f64 / total_planned.max(1) as f64,
            corpus_share: sizes[d] as f64 / total.max(1) as f64,
        })
        .collect()
}
