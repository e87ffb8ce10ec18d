//! Predictions and accuracy metrics.

use alloc::vec::Vec;

use crate::graph::{Labels, Split};
use crate::model::{graph_segments, Dataset, GraphFm, ModelError};
use crate::numerics::{Scalar, Tape};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("split {0} has no nodes")]
    EmptySplit(&'static str),
    #[error("{rows} logit rows for {nodes} nodes")]
    Shape { rows: usize, nodes: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Logits of a set of nodes, one row per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub nodes: Vec<usize>,
    pub logits: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Fraction of correct predictions (per label for multilabel tasks).
    pub accuracy: f64,
    pub count: usize,
    /// `(correct, total)` per class (per label for multilabel tasks).
    pub per_class: Vec<(usize, usize)>,
    /// Micro-averaged F1, multilabel tasks only.
    pub micro_f1: Option<f64>,
}

/// Scores `logits` against the labels of `nodes`: arg-max (lowest index on
/// ties) for multiclass, `logit > 0` per label for multilabel.
pub fn accuracy_report(labels: &Labels, nodes: &[usize], logits: &[Vec<f64>]) -> Result<EvalReport, EvalError> {
    if logits.len() != nodes.len() {
        return Err(EvalError::Shape { rows: logits.len(), nodes: nodes.len() });
    }
    let c = labels.classes();
    let mut per_class = alloc::vec![(0usize, 0usize); c];
    match labels {
        Labels::Multiclass { .. } => {
            let mut correct = 0;
            for (&u, row) in nodes.iter().zip(logits) {
                let y = labels.class_of(u).expect("multiclass");
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                per_class[y].1 += 1;
                if best == y {
                    correct += 1;
                    per_class[y].0 += 1;
                }
            }
            let accuracy = if nodes.is_empty() { 0.0 } else { correct as f64 / nodes.len() as f64 };
            Ok(EvalReport { accuracy, count: nodes.len(), per_class, micro_f1: None })
        }
        Labels::Multilabel { .. } => {
            let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
            for (&u, row) in nodes.iter().zip(logits) {
                let bits = labels.bits_of(u).expect("multilabel");
                for j in 0..c {
                    let pred = row[j] > 0.0;
                    let truth = bits[j] == 1;
                    per_class[j].1 += 1;
                    if pred == truth {
                        correct += 1;
                        per_class[j].0 += 1;
                    }
                    match (pred, truth) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fneg += 1,
                        _ => {}
                    }
                }
            }
            let total = nodes.len() * c;
            let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
            let denom = 2 * tp + fp + fneg;
            let f1 = if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
            Ok(EvalReport { accuracy, count: nodes.len(), per_class, micro_f1: Some(f1) })
        }
    }
}

/// Logits of `nodes`: the encoder sees the whole graph, queries are decoded
/// in chunks with neighbors drawn from `seed`.
pub fn predict<T: Scalar>(model: &GraphFm<T>, d: &Dataset, nodes: &[usize], seed: u64) -> Result<Predictions, ModelError> {
    let mut logits = alloc::vec![Vec::new(); nodes.len()];
    let mut pos = alloc::collections::BTreeMap::new();
    for (i, &u) in nodes.iter().enumerate() {
        pos.insert(u, i);
    }
    for seg in graph_segments(d, nodes, &model.config, 1024, seed) {
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape);
        let out = model.forward(&mut tape, &bound, core::slice::from_ref(&seg))?;
        for o in &out.outputs {
            let v = tape.value(o.logits);
            for (r, &(_, u)) in o.queries.iter().enumerate() {
                logits[pos[&u]] = v.row(r).iter().map(|x| x.f64()).collect();
            }
        }
    }
    Ok(Predictions { nodes: nodes.to_vec(), logits })
}

/// Accuracy of `model` on one split of `d`.
pub fn evaluate<T: Scalar>(model: &GraphFm<T>, d: &Dataset, split: Split, seed: u64) -> Result<EvalReport, EvalError> {
    let nodes = d.graph.split_nodes(split);
    if nodes.is_empty() {
        return Err(EvalError::EmptySplit(split.as_str()));
    }
    let p = predict(model, d, &nodes, seed)?;
    accuracy_report(d.graph.labels(), &p.nodes, &p.logits)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}
