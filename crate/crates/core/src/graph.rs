//! Graph data model, ingestion-time validation, and corpus statistics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("edge ({u}, {v}) references a node outside 0..{n}")]
    EndpointOutOfRange { u: usize, v: usize, n: usize },
    #[error("node {node} has label {label}, outside 0..{classes}")]
    Label { node: usize, label: usize, classes: usize },
    #[error("{what} has {got} entries, expected {expected}")]
    Length { what: &'static str, got: usize, expected: usize },
    #[error("homophily is undefined: every node is isolated")]
    UndefinedHomophily,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("graph invariant violated: {0}")]
    Invariant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Multiclass,
    Multilabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Pretrain,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }
}

/// Per-node targets.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// One class id per node.
    Multiclass { classes: usize, y: Vec<u32> },
    /// `classes` binary labels per node, row-major.
    Multilabel { classes: usize, y: Vec<u8> },
}

impl Labels {
    pub fn classes(&self) -> usize {
        match self {
            Labels::Multiclass { classes, .. } | Labels::Multilabel { classes, .. } => *classes,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Labels::Multiclass { .. } => Task::Multiclass,
            Labels::Multilabel { .. } => Task::Multilabel,
        }
    }

    fn same(&self, a: usize, b: usize) -> bool {
        match self {
            Labels::Multiclass { y, .. } => y[a] == y[b],
            Labels::Multilabel { classes, y } => y[a * classes..(a + 1) * classes] == y[b * classes..(b + 1) * classes],
        }
    }

    pub fn class_of(&self, node: usize) -> Option<usize> {
        match self {
            Labels::Multiclass { y, .. } => Some(y[node] as usize),
            Labels::Multilabel { .. } => None,
        }
    }

    pub fn bits_of(&self, node: usize) -> Option<&[u8]> {
        match self {
            Labels::Multilabel { classes, y } => Some(&y[node * classes..(node + 1) * classes]),
            Labels::Multiclass { .. } => None,
        }
    }

    fn restrict(&self, nodes: &[usize]) -> Labels {
        match self {
            Labels::Multiclass { classes, y } => {
                Labels::Multiclass { classes: *classes, y: nodes.iter().map(|&u| y[u]).collect() }
            }
            Labels::Multilabel { classes, y } => Labels::Multilabel {
                classes: *classes,
                y: nodes.iter().flat_map(|&u| y[u * classes..(u + 1) * classes].iter().copied()).collect(),
            },
        }
    }
}

/// What ingestion dropped while normalizing an edge list.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub self_loops: usize,
    pub duplicates: usize,
}

/// Undirected simple graph in CSR form with node features, labels and splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    /// Row-major `N × F`; `None` means a constant 1 feature.
    features: Option<Vec<f64>>,
    num_features: usize,
    labels: Labels,
    splits: Vec<Split>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list: edges are symmetrized,
    /// duplicates merged and self-loops dropped (both counted in the report).
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Option<(usize, Vec<f64>)>,
        labels: Labels,
        splits: Vec<Split>,
    ) -> Result<(Self, IngestReport), GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::Empty);
        }
        let mut report = IngestReport::default();
        let mut pairs: Vec<(u32, u32)> = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::EndpointOutOfRange { u, v, n: num_nodes });
            }
            if u == v {
                report.self_loops += 1;
                continue;
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            pairs.push((a as u32, b as u32));
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        report.duplicates = before - pairs.len();
        let g = Self::from_unique_pairs(num_nodes, &pairs, features, labels, splits)?;
        Ok((g, report))
    }

    /// `pairs` must be sorted, deduplicated `(u, v)` with `u < v`.
    fn from_unique_pairs(
        num_nodes: usize,
        pairs: &[(u32, u32)],
        features: Option<(usize, Vec<f64>)>,
        labels: Labels,
        splits: Vec<Split>,
    ) -> Result<Self, GraphError> {
        let mut deg = vec![0usize; num_nodes];
        for &(a, b) in pairs {
            deg[a as usize] += 1;
            deg[b as usize] += 1;
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for i in 0..num_nodes {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut cols = vec![0u32; offsets[num_nodes]];
        for &(a, b) in pairs {
            cols[fill[a as usize]] = b;
            fill[a as usize] += 1;
            cols[fill[b as usize]] = a;
            fill[b as usize] += 1;
        }
        for i in 0..num_nodes {
            cols[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        let (num_features, features) = match features {
            Some((f, data)) => {
                if data.len() != f * num_nodes {
                    return Err(GraphError::Length { what: "features", got: data.len(), expected: f * num_nodes });
                }
                (f, Some(data))
            }
            None => (1, None),
        };
        let g = Self { num_nodes, offsets, cols, features, num_features, labels, splits };
        g.check_attributes()?;
        Ok(g)
    }

    fn check_attributes(&self) -> Result<(), GraphError> {
        let n = self.num_nodes;
        if self.splits.len() != n {
            return Err(GraphError::Length { what: "splits", got: self.splits.len(), expected: n });
        }
        match &self.labels {
            Labels::Multiclass { classes, y } => {
                if y.len() != n {
                    return Err(GraphError::Length { what: "labels", got: y.len(), expected: n });
                }
                if let Some((node, &label)) = y.iter().enumerate().find(|(_, &l)| l as usize >= *classes) {
                    return Err(GraphError::Label { node, label: label as usize, classes: *classes });
                }
            }
            Labels::Multilabel { classes, y } => {
                if y.len() != n * classes {
                    return Err(GraphError::Length { what: "labels", got: y.len(), expected: n * classes });
                }
                if let Some((i, &b)) = y.iter().enumerate().find(|(_, &b)| b > 1) {
                    return Err(GraphError::Label { node: i / classes, label: b as usize, classes: 2 });
                }
            }
        }
        Ok(())
    }

    /// Full structural check: symmetric, sorted, no self-loops or duplicates.
    pub fn validate(&self) -> Result<(), GraphError> {
        self.check_attributes()?;
        for u in 0..self.num_nodes {
            let nb = self.neighbors(u);
            for w in nb.windows(2) {
                if w[0] >= w[1] {
                    return Err(GraphError::Invariant(alloc::format!("row {} not strictly sorted", u)));
                }
            }
            for &v in nb {
                let v = v as usize;
                if v == u {
                    return Err(GraphError::Invariant(alloc::format!("self-loop at {}", u)));
                }
                if v >= self.num_nodes || self.neighbors(v).binary_search(&(u as u32)).is_err() {
                    return Err(GraphError::Invariant(alloc::format!("edge ({}, {}) not symmetric", u, v)));
                }
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Undirected edge count `E`.
    pub fn num_edges(&self) -> usize {
        self.cols.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn columns(&self) -> &[u32] {
        &self.cols
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.cols[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&(v as u32)).is_ok()
    }

    /// Undirected edges `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes)
            .flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v as usize)))
            .filter(|(u, v)| u < v)
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn has_features(&self) -> bool {
        self.features.is_some()
    }

    pub fn raw_features(&self) -> Option<&[f64]> {
        self.features.as_deref()
    }

    /// Feature row of `u`; a constant `[1.0]` when the graph has no features.
    pub fn feature_row(&self, u: usize) -> &[f64] {
        const ONE: [f64; 1] = [1.0];
        match &self.features {
            Some(f) => &f[u * self.num_features..(u + 1) * self.num_features],
            None => &ONE,
        }
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.labels.task()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.classes()
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn split_of(&self, u: usize) -> Split {
        self.splits[u]
    }

    pub fn split_nodes(&self, split: Split) -> Vec<usize> {
        (0..self.num_nodes).filter(|&u| self.splits[u] == split).collect()
    }

    /// Boolean mask of one split.
    pub fn split_mask(&self, split: Split) -> Vec<bool> {
        self.splits.iter().map(|&s| s == split).collect()
    }

    pub fn with_splits(mut self, splits: Vec<Split>) -> Result<Self, GraphError> {
        self.splits = splits;
        self.check_attributes()?;
        Ok(self)
    }

    /// Induced subgraph on `nodes` (any order, no repeats), relabeled to
    /// `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut local = alloc::collections::BTreeMap::new();
        for (i, &u) in nodes.iter().enumerate() {
            local.insert(u, i as u32);
        }
        let mut pairs = Vec::new();
        for (i, &u) in nodes.iter().enumerate() {
            for &v in self.neighbors(u) {
                if let Some(&j) = local.get(&(v as usize)) {
                    if (i as u32) < j {
                        pairs.push((i as u32, j));
                    }
                }
            }
        }
        pairs.sort_unstable();
        let features = self.features.as_ref().map(|_| {
            let f = self.num_features;
            (f, nodes.iter().flat_map(|&u| self.feature_row(u).iter().copied()).collect())
        });
        let labels = self.labels.restrict(nodes);
        let splits = nodes.iter().map(|&u| self.splits[u]).collect();
        Self::from_unique_pairs(nodes.len().max(1), &pairs, features, labels, splits)
            .expect("restriction of a valid graph is valid")
    }

    /// Same graph with nodes renumbered: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let edges: Vec<(usize, usize)> = self.edges().map(|(u, v)| (inv[u], inv[v])).collect();
        let features = self.features.as_ref().map(|_| {
            (self.num_features, perm.iter().flat_map(|&u| self.feature_row(u).iter().copied()).collect())
        });
        let labels = self.labels.restrict(perm);
        let splits = perm.iter().map(|&u| self.splits[u]).collect();
        Graph::from_edges(self.num_nodes, &edges, features, labels, splits).expect("permutation of a valid graph").0
    }
}

/// Node homophily ratio: the mean over non-isolated nodes of the fraction of
/// neighbors sharing the node's label.
pub fn homophily_ratio(g: &Graph) -> Result<f64, GraphError> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for v in 0..g.num_nodes() {
        let nb = g.neighbors(v);
        if nb.is_empty() {
            continue;
        }
        let same = nb.iter().filter(|&&w| g.labels.same(v, w as usize)).count();
        total += same as f64 / nb.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(GraphError::UndefinedHomophily);
    }
    Ok(total / counted as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Homophilic,
    Heterophilic,
}

impl Regime {
    pub fn classify(homophily: f64) -> Self {
        if homophily >= 0.5 {
            Regime::Homophilic
        } else {
            Regime::Heterophilic
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Homophilic => "homophilic",
            Regime::Heterophilic => "heterophilic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub avg_degree: f64,
    pub homophily: f64,
    pub regime: Regime,
}

pub fn graph_stats(g: &Graph) -> Result<GraphStats, GraphError> {
    let homophily = homophily_ratio(g)?;
    Ok(GraphStats {
        num_nodes: g.num_nodes(),
        num_edges: g.num_edges(),
        avg_degree: 2.0 * g.num_edges() as f64 / g.num_nodes() as f64,
        homophily,
        regime: Regime::classify(homophily),
    })
}

/// Per-dataset metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default)]
    pub path: Option<String>,
    pub task: Task,
    pub num_classes: usize,
    pub num_features: usize,
    /// Fixed learning rate for this dataset's feature MLP and head; when
    /// absent it is derived from the node count.
    #[serde(default)]
    pub dataset_lr: Option<f64>,
    pub role: Role,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), GraphError> {
        if let Some(lr) = self.dataset_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(GraphError::Manifest(alloc::format!("{}: dataset_lr must be > 0", self.name)));
            }
        }
        if self.task == Task::Multiclass && self.num_classes < 2 {
            return Err(GraphError::Manifest(alloc::format!("{}: multiclass needs at least 2 classes", self.name)));
        }
        if self.num_classes == 0 || self.num_features == 0 {
            return Err(GraphError::Manifest(alloc::format!("{}: zero classes or features", self.name)));
        }
        Ok(())
    }

    /// Checks that a loaded graph agrees with this manifest.
    pub fn check_graph(&self, g: &Graph) -> Result<(), GraphError> {
        self.validate()?;
        if g.num_features() != self.num_features {
            return Err(GraphError::Manifest(alloc::format!(
                "{}: manifest says {} features, graph has {}",
                self.name,
                self.num_features,
                g.num_features()
            )));
        }
        if g.num_classes() != self.num_classes || g.task() != self.task {
            return Err(GraphError::Manifest(alloc::format!("{}: task or class count disagrees with labels", self.name)));
        }
        Ok(())
    }

    pub fn for_graph(name: &str, g: &Graph, role: Role) -> Self {
        Self {
            name: name.into(),
            path: None,
            task: g.task(),
            num_classes: g.num_classes(),
            num_features: g.num_features(),
            dataset_lr: None,
            role,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(y: &[u32], classes: usize) -> Labels {
        Labels::Multiclass { classes, y: y.to_vec() }
    }

    fn graph(n: usize, edges: &[(usize, usize)], y: &[u32]) -> Graph {
        let classes = (*y.iter().max().unwrap() as usize + 1).max(2);
        Graph::from_edges(n, edges, None, mc(y, classes), vec![Split::Train; n]).unwrap().0
    }

    #[test]
    fn triangle_degrees() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)], &[0, 0, 0]);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!((0..3).map(|u| g.degree(u)).collect::<Vec<_>>(), vec![2, 2, 2]);
        g.validate().unwrap();
    }

    #[test]
    fn duplicate_edge_counted_once() {
        let (g, rep) =
            Graph::from_edges(2, &[(0, 1), (0, 1)], None, mc(&[0, 1], 2), vec![Split::None; 2]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(rep.duplicates, 1);
    }

    #[test]
    fn reversed_edge_is_symmetrized_duplicate() {
        let (g, rep) =
            Graph::from_edges(2, &[(0, 1), (1, 0)], None, mc(&[0, 1], 2), vec![Split::None; 2]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(rep.duplicates, 1);
    }

    #[test]
    fn self_loops_dropped_and_reported() {
        let (g, rep) =
            Graph::from_edges(2, &[(0, 0), (0, 1), (1, 1)], None, mc(&[0, 1], 2), vec![Split::None; 2]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(rep.self_loops, 2);
    }

    #[test]
    fn out_of_range_endpoint() {
        let err = Graph::from_edges(3, &[(5, 1)], None, mc(&[0, 0, 1], 2), vec![Split::None; 3]).unwrap_err();
        assert!(matches!(err, GraphError::EndpointOutOfRange { u: 5, v: 1, n: 3 }));
    }

    #[test]
    fn label_out_of_range() {
        let err = Graph::from_edges(2, &[], None, mc(&[0, 2], 2), vec![Split::None; 2]).unwrap_err();
        assert!(matches!(err, GraphError::Label { node: 1, label: 2, classes: 2 }));
    }

    #[test]
    fn empty_graph_rejected() {
        let err = Graph::from_edges(0, &[], None, mc(&[], 2), vec![]).unwrap_err();
        assert_eq!(err, GraphError::Empty);
    }

    #[test]
    fn homophily_examples() {
        let tri = graph(3, &[(0, 1), (1, 2), (0, 2)], &[0, 0, 0]);
        assert_eq!(homophily_ratio(&tri).unwrap(), 1.0);
        let star = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)], &[0, 1, 1, 1, 1]);
        assert_eq!(homophily_ratio(&star).unwrap(), 0.0);
        let path = graph(3, &[(0, 1), (1, 2)], &[0, 0, 1]);
        assert!((homophily_ratio(&path).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn isolated_nodes_excluded_from_homophily() {
        let g = graph(4, &[(0, 1)], &[0, 0, 1, 1]);
        assert_eq!(homophily_ratio(&g).unwrap(), 1.0);
        let lonely = graph(3, &[], &[0, 1, 1]);
        assert_eq!(homophily_ratio(&lonely).unwrap_err(), GraphError::UndefinedHomophily);
    }

    #[test]
    fn stats_examples() {
        let tri = graph(3, &[(0, 1), (1, 2), (0, 2)], &[0, 0, 0]);
        let s = graph_stats(&tri).unwrap();
        assert_eq!(s.avg_degree, 2.0);
        assert_eq!(s.regime, Regime::Homophilic);
        let star = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)], &[0, 1, 1, 1, 1]);
        assert!((graph_stats(&star).unwrap().avg_degree - 1.6).abs() < 1e-15);
        assert_eq!(Regime::classify(0.5), Regime::Homophilic);
        assert_eq!(Regime::classify(0.4999), Regime::Heterophilic);
    }

    #[test]
    fn induced_subgraph_keeps_only_internal_edges() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (0, 3)], &[0, 1, 0, 1]);
        let s = g.induced(&[3, 0, 1]);
        assert_eq!(s.num_nodes(), 3);
        // local 0=3, 1=0, 2=1: edges 3-0 and 0-1
        assert!(s.has_edge(0, 1) && s.has_edge(1, 2) && !s.has_edge(0, 2));
        s.validate().unwrap();
    }

    #[test]
    fn manifest_rules() {
        let mut m = DatasetManifest {
            name: "x".into(),
            path: None,
            task: Task::Multiclass,
            num_classes: 2,
            num_features: 1,
            dataset_lr: Some(0.012),
            role: Role::Pretrain,
        };
        m.validate().unwrap();
        m.dataset_lr = Some(0.0);
        assert!(m.validate().is_err());
        m.dataset_lr = None;
        m.num_classes = 1;
        assert!(m.validate().is_err());
    }
}
