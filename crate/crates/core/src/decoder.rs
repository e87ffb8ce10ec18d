//! Per-node decoder: `[self; sampled neighbors; latents]` sequences, a depth-M
//! transformer, per-dataset heads read at position 0, and the task losses.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::ModelConfig;
use crate::encoder::LatentState;
use crate::graph::Graph;
use crate::numerics::{
    init_block, init_norm, linear, transformer_block, AttnMask, BlockLayout, BlockParams, Bound, Group, NormParams,
    NumericsError, ParamId, ParamStore, Scalar, Tape, Tensor, Var,
};
use crate::rng::{below, trunc_normal};
use crate::tokenizer::DatasetAdapter;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecoderError {
    #[error("query of graph {query_graph} given the latents of graph {latent_graph}")]
    GraphMismatch { query_graph: usize, latent_graph: usize },
    #[error("sequence from dataset {got} passed to the adapter of dataset {expected}")]
    AdapterMismatch { expected: u32, got: u32 },
    #[error("expected {expected} neighbor slots, got {got}")]
    NeighborSlots { expected: usize, got: usize },
    #[error("no query nodes to decode")]
    Empty,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenType {
    SelfNode = 0,
    Neighbor = 1,
    Latent = 2,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    /// Learned type embeddings `[3 × D]` (self, neighbor, latent).
    pub type_emb: ParamId,
    pub blocks: Vec<BlockParams>,
    pub final_norm: NormParams,
    pub neighbors: usize,
}

pub fn init_decoder<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<DecoderParams, NumericsError> {
    let d = cfg.dim;
    let type_emb = store.add(
        "decoder.type_emb",
        Tensor::from_fn(3, d, |_, _| T::of(trunc_normal(rng, 0.02))),
        Group::Trunk,
        true,
    )?;
    let mut blocks = Vec::with_capacity(cfg.dec_depth);
    for m in 0..cfg.dec_depth {
        blocks.push(init_block(store, &alloc::format!("decoder.block{}", m), d, cfg.dec_ffn, cfg.dec_heads, Group::Trunk, rng)?);
    }
    let final_norm = init_norm(store, "decoder.ln_out", d, Group::Trunk)?;
    Ok(DecoderParams { type_emb, blocks, final_norm, neighbors: cfg.neighbors })
}

/// `T` random walks of `walk_len` steps from `node`; distinct visited nodes
/// other than `node`, in first-visit order, truncated to `T`.
pub fn sample_neighbors(g: &Graph, node: usize, t: usize, walk_len: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(t);
    if walk_len == 0 || t == 0 {
        return out;
    }
    for _ in 0..t {
        let mut cur = node;
        for _ in 0..walk_len {
            let nb = g.neighbors(cur);
            if nb.is_empty() {
                break;
            }
            cur = nb[below(rng, nb.len())] as usize;
            if cur != node && !out.contains(&cur) {
                out.push(cur);
            }
        }
    }
    out.truncate(t);
    out
}

/// Where the pieces of one node sequence come from.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSequenceSpec {
    pub query: usize,
    /// Parent graph of the query.
    pub graph: usize,
    pub dataset: u32,
    /// Index of the query's member in the [`LatentState`].
    pub latent_member: usize,
    /// Row of the query's token in the content table.
    pub self_row: usize,
    /// Exactly `T` slots; `None` marks a missing neighbor.
    pub neighbor_rows: Vec<Option<usize>>,
}

/// Assembled decoder input: `Q` sequences of length `1 + T + K`.
#[derive(Clone, Debug)]
pub struct NodeBatch {
    /// `[(Q·(1+T+K)) × D]`.
    pub tokens: Var,
    pub seq_len: usize,
    pub types: Vec<TokenType>,
    /// Per token; `false` for padded neighbor slots.
    pub valid: Vec<bool>,
    pub queries: Vec<usize>,
    pub graphs: Vec<usize>,
    pub datasets: Vec<u32>,
}

impl NodeBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Token types of one sequence.
pub fn sequence_types(t: usize, k: usize) -> Vec<TokenType> {
    let mut types = vec![TokenType::SelfNode];
    types.extend(core::iter::repeat_n(TokenType::Neighbor, t));
    types.extend(core::iter::repeat_n(TokenType::Latent, k));
    types
}

/// Builds `token = content + type embedding` for every sequence; content of
/// missing neighbor slots is zero and the slot is masked.
pub fn build_node_sequences<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &DecoderParams,
    content: Var,
    latents: &LatentState,
    specs: &[NodeSequenceSpec],
) -> Result<NodeBatch, DecoderError> {
    if specs.is_empty() {
        return Err(DecoderError::Empty);
    }
    let t = p.neighbors;
    let k = latents.num_latents;
    let len = 1 + t + k;
    let table_rows = tape.value(content).rows();
    let mut idx: Vec<Option<usize>> = Vec::with_capacity(specs.len() * len);
    let mut valid = Vec::with_capacity(specs.len() * len);
    for s in specs {
        let latent_graph = latents.graph_ids[s.latent_member];
        if latent_graph != s.graph {
            return Err(DecoderError::GraphMismatch { query_graph: s.graph, latent_graph });
        }
        if s.neighbor_rows.len() != t {
            return Err(DecoderError::NeighborSlots { expected: t, got: s.neighbor_rows.len() });
        }
        idx.push(Some(s.self_row));
        valid.push(true);
        for &nb in &s.neighbor_rows {
            idx.push(nb);
            valid.push(nb.is_some());
        }
        for j in 0..k {
            idx.push(Some(table_rows + s.latent_member * k + j));
            valid.push(true);
        }
    }
    let source = tape.concat_rows(&[content, latents.z])?;
    let raw = tape.gather_rows(source, &idx)?;
    let types = sequence_types(t, k);
    let type_idx: Vec<Option<usize>> = (0..specs.len()).flat_map(|_| types.iter().map(|&ty| Some(ty as usize))).collect();
    let emb = tape.gather_rows(bound.var(p.type_emb), &type_idx)?;
    let tokens = tape.add(raw, emb)?;
    Ok(NodeBatch {
        tokens,
        seq_len: len,
        types: (0..specs.len()).flat_map(|_| types.iter().copied()).collect(),
        valid,
        queries: specs.iter().map(|s| s.query).collect(),
        graphs: specs.iter().map(|s| s.graph).collect(),
        datasets: specs.iter().map(|s| s.dataset).collect(),
    })
}

/// Runs the decoder blocks and the head of `adapter`; logits `[Q × C]` read
/// from position 0 of each sequence.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    p: &DecoderParams,
    batch: &NodeBatch,
    adapter: &DatasetAdapter,
) -> Result<Var, DecoderError> {
    if let Some(&got) = batch.datasets.iter().find(|&&d| d != adapter.dataset) {
        return Err(DecoderError::AdapterMismatch { expected: adapter.dataset, got });
    }
    let q = batch.len();
    if q == 0 {
        return Err(DecoderError::Empty);
    }
    let mask = AttnMask::Blocks(BlockLayout::uniform(q, batch.seq_len).with_key_valid(batch.valid.clone()));
    let mut x = batch.tokens;
    for blk in &p.blocks {
        x = transformer_block(tape, bound, x, blk, &mask)?;
    }
    let rows: Vec<usize> = (0..q).map(|i| i * batch.seq_len).collect();
    let first = tape.select_rows(x, &rows)?;
    let h = tape.layer_norm(first, bound.var(p.final_norm.gain), bound.var(p.final_norm.bias))?;
    Ok(linear(tape, bound, h, &adapter.head)?)
}

/// Supervision for a set of decoded queries.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Multiclass(Vec<usize>),
    /// Row-major `{0,1}` per query and class.
    Multilabel(Vec<f64>),
}

impl Targets {
    pub fn len(&self, classes: usize) -> usize {
        match self {
            Targets::Multiclass(y) => y.len(),
            Targets::Multilabel(y) => y.len() / classes.max(1),
        }
    }

    pub fn for_nodes(g: &Graph, nodes: &[usize]) -> Self {
        match g.labels() {
            crate::graph::Labels::Multiclass { y, .. } => Targets::Multiclass(nodes.iter().map(|&u| y[u] as usize).collect()),
            crate::graph::Labels::Multilabel { .. } => Targets::Multilabel(
                nodes.iter().flat_map(|&u| g.labels().bits_of(u).unwrap().iter().map(|&b| b as f64)).collect(),
            ),
        }
    }
}

/// Summed per-query loss (cross-entropy, or mean per-label BCE).
pub fn loss_sum<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &Targets) -> Result<Var, NumericsError> {
    match targets {
        Targets::Multiclass(y) => tape.softmax_cross_entropy(logits, y),
        Targets::Multilabel(y) => {
            let y: Vec<T> = y.iter().map(|&v| T::of(v)).collect();
            tape.bce_with_logits(logits, &y)
        }
    }
}

/// Mean per-query loss.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &Targets) -> Result<Var, NumericsError> {
    let q = tape.value(logits).rows();
    let s = loss_sum(tape, logits, targets)?;
    Ok(tape.scale(s, T::one() / T::of(q as f64)))
}
