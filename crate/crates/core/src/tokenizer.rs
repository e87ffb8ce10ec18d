//! Per-dataset adapters: node-feature MLP, PE projection and output head.

use alloc::vec::Vec;

use rand::Rng;

use crate::config::ModelConfig;
use crate::graph::{Graph, Task};
use crate::numerics::{feed_forward, init_linear, linear, Bound, Group, LinearParams, NumericsError, ParamStore, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TokenizerError {
    #[error("adapter for dataset {dataset} expects {expected} features, got {got}")]
    FeatureWidth { dataset: u32, expected: usize, got: usize },
    #[error("positional encodings have {got} rows for {expected} nodes")]
    PeRows { expected: usize, got: usize },
    #[error("sequences from dataset {got} passed to the adapter of dataset {expected}")]
    AdapterMismatch { expected: u32, got: u32 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Dataset-specific parameters: `MLP_g`, the PE projection and the head `W_g`.
#[derive(Clone, Debug)]
pub struct DatasetAdapter {
    pub dataset: u32,
    pub num_features: usize,
    pub num_classes: usize,
    pub task: Task,
    pub mlp1: LinearParams,
    pub mlp2: LinearParams,
    pub pe_proj: LinearParams,
    pub head: LinearParams,
}

pub fn init_adapter<T: Scalar>(
    store: &mut ParamStore<T>,
    dataset: u32,
    num_features: usize,
    num_classes: usize,
    task: Task,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<DatasetAdapter, NumericsError> {
    let mlp = Group::DatasetMlp(dataset);
    let d = cfg.dim;
    Ok(DatasetAdapter {
        dataset,
        num_features,
        num_classes,
        task,
        mlp1: init_linear(store, &alloc::format!("adapter{}.mlp1", dataset), num_features, d, true, mlp, rng)?,
        mlp2: init_linear(store, &alloc::format!("adapter{}.mlp2", dataset), d, d, true, mlp, rng)?,
        pe_proj: init_linear(store, &alloc::format!("adapter{}.pe", dataset), cfg.pe_dim, d, false, mlp, rng)?,
        head: init_linear(
            store,
            &alloc::format!("adapter{}.head", dataset),
            d,
            num_classes,
            false,
            Group::DatasetHead(dataset),
            rng,
        )?,
    })
}

impl DatasetAdapter {
    /// Parameter ids of this adapter.
    pub fn param_ids(&self) -> Vec<crate::numerics::ParamId> {
        let mut ids = Vec::new();
        for l in [&self.mlp1, &self.mlp2, &self.pe_proj, &self.head] {
            ids.push(l.w);
            ids.extend(l.b);
        }
        ids
    }
}

/// Token sequence of one (sub)graph.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    pub graph_id: usize,
    /// `[n × D]`.
    pub tokens: Var,
    /// Parent-graph node index of each token.
    pub node_ids: Vec<usize>,
}

/// Feature rows of `nodes` as a constant-ready matrix.
pub fn feature_matrix<T: Scalar>(g: &Graph, nodes: &[usize]) -> Tensor<T> {
    let f = g.num_features();
    let mut data = Vec::with_capacity(nodes.len() * f);
    for &u in nodes {
        data.extend(g.feature_row(u).iter().map(|&x| T::of(x)));
    }
    Tensor::matrix(nodes.len(), f, data).expect("feature rows have the graph width")
}

/// `x_i = MLP_g(u_i) + W_pe·p_i`.
pub fn embed_nodes<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    adapter: &DatasetAdapter,
    features: Var,
    pe: Var,
) -> Result<Var, TokenizerError> {
    let (fv, pv) = (tape.value(features), tape.value(pe));
    if fv.cols() != adapter.num_features {
        return Err(TokenizerError::FeatureWidth { dataset: adapter.dataset, expected: adapter.num_features, got: fv.cols() });
    }
    if pv.rows() != fv.rows() {
        return Err(TokenizerError::PeRows { expected: fv.rows(), got: pv.rows() });
    }
    let u = feed_forward(tape, bound, features, &adapter.mlp1, &adapter.mlp2)?;
    let p = linear(tape, bound, pe, &adapter.pe_proj)?;
    Ok(tape.add(u, p)?)
}

/// Embeds `nodes` of `g` given their positional encodings.
pub fn embed_graph_nodes<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    adapter: &DatasetAdapter,
    g: &Graph,
    graph_id: usize,
    nodes: &[usize],
    pe: Var,
) -> Result<TokenSequence, TokenizerError> {
    if g.num_features() != adapter.num_features {
        return Err(TokenizerError::FeatureWidth {
            dataset: adapter.dataset,
            expected: adapter.num_features,
            got: g.num_features(),
        });
    }
    let f = tape.constant(feature_matrix(g, nodes));
    let tokens = embed_nodes(tape, bound, adapter, f, pe)?;
    Ok(TokenSequence { graph_id, tokens, node_ids: nodes.to_vec() })
}
