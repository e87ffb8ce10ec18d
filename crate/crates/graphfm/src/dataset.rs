//! Dataset directory format.
//!
//! A dataset is a directory holding:
//! - `meta.json`: name, num_nodes, num_features, num_classes, task
//!   (`"multiclass"` | `"multilabel"`), optional dataset_lr and role;
//! - `edges.tsv`: one `u<TAB>v` edge per line, 0-based ids;
//! - `features.csv` (optional): one row of comma-separated floats per node;
//! - `labels.csv`: a class id per line, or comma-separated {0,1} bits;
//! - `splits.csv`: one of train, val, test, none per line.
//!
//! Reading symmetrizes and deduplicates edges and drops self-loops; writing
//! emits the canonical form (each undirected edge once, `u < v`, row order)
//! with floats in shortest round-trip notation, so write → read is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use graphfm_core::graph::{DatasetManifest, Graph, IngestReport, Labels, Role, Split, Task};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META: &str = "meta.json";
pub const EDGES: &str = "edges.tsv";
pub const FEATURES: &str = "features.csv";
pub const LABELS: &str = "labels.csv";
pub const SPLITS: &str = "splits.csv";

/// Contents of `meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_lr: Option<f64>,
    #[serde(default = "default_role")]
    pub role: Role,
}

fn default_role() -> Role {
    Role::Pretrain
}

impl Meta {
    pub fn manifest(&self, path: &Path) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            path: Some(path.display().to_string()),
            task: self.task,
            num_classes: self.num_classes,
            num_features: self.num_features,
            dataset_lr: self.dataset_lr,
            role: self.role,
        }
    }

    pub fn from_manifest(m: &DatasetManifest, num_nodes: usize) -> Self {
        Meta {
            name: m.name.clone(),
            num_nodes,
            num_features: m.num_features,
            num_classes: m.num_classes,
            task: m.task,
            dataset_lr: m.dataset_lr,
            role: m.role,
        }
    }
}

/// A dataset read from disk.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub graph: Graph,
    pub manifest: DatasetManifest,
    pub report: IngestReport,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Non-empty lines with their 1-based line numbers (a trailing `\r` is
/// ignored).
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r'))).filter(|(_, l)| !l.is_empty())
}

pub fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join(META);
    serde_json::from_str(&read_text(&path)?).map_err(|e| parse_err(&path, e.line(), e.to_string()))
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (no, line) in lines(&read_text(path)?) {
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, no, "expected `u<TAB>v`"));
        };
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| parse_err(path, no, format!("bad node id {:?}: {}", s, e)));
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= n || v >= n {
            return Err(parse_err(path, no, format!("edge ({}, {}) outside 0..{}", u, v, n)));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

fn read_features(path: &Path, n: usize, f: usize) -> Result<Vec<f64>> {
    let mut data = Vec::with_capacity(n * f);
    let mut rows = 0;
    for (no, line) in lines(&read_text(path)?) {
        let before = data.len();
        for field in line.split(',') {
            let x: f64 = field.trim().parse().map_err(|e| parse_err(path, no, format!("bad float {:?}: {}", field, e)))?;
            data.push(x);
        }
        if data.len() - before != f {
            return Err(Error::Validation(format!(
                "{}:{}: {} features, meta.json says {}",
                path.display(),
                no,
                data.len() - before,
                f
            )));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Validation(format!("{}: {} rows, expected {}", path.display(), rows, n)));
    }
    Ok(data)
}

fn read_labels(path: &Path, meta: &Meta) -> Result<Labels> {
    let (n, c) = (meta.num_nodes, meta.num_classes);
    let text = read_text(path)?;
    let rows: Vec<(usize, &str)> = lines(&text).collect();
    if rows.len() != n {
        return Err(Error::Validation(format!("{}: {} rows, expected {}", path.display(), rows.len(), n)));
    }
    match meta.task {
        Task::Multiclass => {
            let mut y = Vec::with_capacity(n);
            for (no, line) in rows {
                let l: u32 = line.trim().parse().map_err(|e| parse_err(path, no, format!("bad label {:?}: {}", line, e)))?;
                y.push(l);
            }
            Ok(Labels::Multiclass { classes: c, y })
        }
        Task::Multilabel => {
            let mut y = Vec::with_capacity(n * c);
            for (no, line) in rows {
                let before = y.len();
                for field in line.split(',') {
                    match field.trim() {
                        "0" => y.push(0),
                        "1" => y.push(1),
                        other => return Err(parse_err(path, no, format!("label bit {:?} is not 0 or 1", other))),
                    }
                }
                if y.len() - before != c {
                    return Err(parse_err(path, no, format!("{} label bits, expected {}", y.len() - before, c)));
                }
            }
            Ok(Labels::Multilabel { classes: c, y })
        }
    }
}

pub fn read_splits(path: &Path, n: usize) -> Result<Vec<Split>> {
    let mut splits = Vec::with_capacity(n);
    for (no, line) in lines(&read_text(path)?) {
        splits.push(Split::parse(line.trim()).ok_or_else(|| parse_err(path, no, format!("unknown split {:?}", line)))?);
    }
    if splits.len() != n {
        return Err(Error::Validation(format!("{}: {} rows, expected {}", path.display(), splits.len(), n)));
    }
    Ok(splits)
}

/// Reads and validates a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<LoadedDataset> {
    let meta = read_meta(dir)?;
    let manifest = meta.manifest(dir);
    manifest.validate()?;
    if meta.num_nodes == 0 {
        return Err(graphfm_core::graph::GraphError::Empty.into());
    }
    let n = meta.num_nodes;
    let edges = read_edges(&dir.join(EDGES), n)?;
    let feat_path = dir.join(FEATURES);
    let features = if feat_path.exists() {
        Some((meta.num_features, read_features(&feat_path, n, meta.num_features)?))
    } else if meta.num_features != 1 {
        return Err(Error::Validation(format!(
            "{}: no {} but meta.json says {} features",
            dir.display(),
            FEATURES,
            meta.num_features
        )));
    } else {
        None
    };
    let labels = read_labels(&dir.join(LABELS), &meta)?;
    let splits = read_splits(&dir.join(SPLITS), n)?;
    let (graph, report) = Graph::from_edges(n, &edges, features, labels, splits)?;
    manifest.check_graph(&graph)?;
    Ok(LoadedDataset { graph, manifest, report })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `graph` in canonical form. The directory is created if needed;
/// a stale `features.csv` is removed when the graph has no features.
pub fn write_dataset(dir: &Path, graph: &Graph, manifest: &DatasetManifest) -> Result<()> {
    manifest.check_graph(graph)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta::from_manifest(manifest, graph.num_nodes());
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Validation(e.to_string()))?;
    write_text(&dir.join(META), &(json + "\n"))?;

    let mut s = String::new();
    for (u, v) in graph.edges() {
        writeln!(s, "{}\t{}", u, v).expect("string write");
    }
    write_text(&dir.join(EDGES), &s)?;

    let feat_path = dir.join(FEATURES);
    if graph.has_features() {
        let mut s = String::new();
        for u in 0..graph.num_nodes() {
            let row: Vec<String> = graph.feature_row(u).iter().map(|x| format!("{:?}", x)).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        write_text(&feat_path, &s)?;
    } else if feat_path.exists() {
        fs::remove_file(&feat_path).map_err(|e| Error::io(&feat_path, e))?;
    }

    let mut s = String::new();
    match graph.labels() {
        Labels::Multiclass { y, .. } => {
            for l in y {
                writeln!(s, "{}", l).expect("string write");
            }
        }
        Labels::Multilabel { classes, y } => {
            for row in y.chunks(*classes) {
                let bits: Vec<String> = row.iter().map(|b| b.to_string()).collect();
                s.push_str(&bits.join(","));
                s.push('\n');
            }
        }
    }
    write_text(&dir.join(LABELS), &s)?;

    let mut s = String::new();
    for sp in graph.splits() {
        s.push_str(sp.as_str());
        s.push('\n');
    }
    write_text(&dir.join(SPLITS), &s)
}

/// Dataset directories under `root`, sorted by path: `root` itself when it
/// holds a `meta.json`, else its immediate subdirectories that do.
pub fn dataset_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if root.join(META).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let p = entry.map_err(|e| Error::io(root, e))?.path();
        if p.is_dir() && p.join(META).exists() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!("{}: no dataset directories (nothing with a {})", root.display(), META)));
    }
    Ok(dirs)
}
