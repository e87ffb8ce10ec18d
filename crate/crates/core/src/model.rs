//! The assembled model: SignNet, per-dataset adapters, latent encoder and node
//! decoder over one shared parameter store.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::config::ModelConfig;
use crate::decoder::{build_node_sequences, decode, init_decoder, loss_sum, sample_neighbors, DecoderError, DecoderParams, NodeSequenceSpec, Targets};
use crate::encoder::{encode, init_encoder, pack_batch, EncoderError, EncoderParams, LatentState};
use crate::graph::{Graph, Split, Task};
use crate::numerics::{grad_check, Bound, GradCheckConfig, GradCheckReport, NumericsError, ParamStore, Scalar, Tape, Var};
use crate::posenc::{init_signnet, signnet_encode, EigenBasis, SignNetParams};
use crate::rng::{mix, rng_for, shuffle};
use crate::sampler::{Minibatch, Slice};
use crate::tokenizer::{embed_graph_nodes, init_adapter, DatasetAdapter, TokenSequence, TokenizerError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("no adapter for dataset {0}")]
    UnknownDataset(u32),
    #[error("adapter for dataset {0} already exists")]
    DuplicateDataset(u32),
    #[error("segment {segment}: {detail}")]
    Segment { segment: usize, detail: String },
    #[error("no query nodes in the batch")]
    NoQueries,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
}

/// A graph with its cached Laplacian basis, registered under a dataset id.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub id: u32,
    pub name: String,
    pub graph: Graph,
    pub basis: EigenBasis,
    /// Explicit learning rate for the dataset's adapter, overriding the size rule.
    pub dataset_lr: Option<f64>,
}

/// One encoder member plus the queries decoded against its latents.
#[derive(Clone, Debug)]
pub struct Segment<'a> {
    pub dataset: u32,
    pub graph: &'a Graph,
    pub basis: &'a EigenBasis,
    /// Encoder input nodes (parent ids).
    pub nodes: Vec<usize>,
    /// Query nodes (parent ids).
    pub queries: Vec<usize>,
    /// Up to `T` sampled neighbors per query (parent ids).
    pub neighbors: Vec<Vec<usize>>,
}

/// Logits of one dataset's queries.
#[derive(Clone, Debug)]
pub struct DatasetOutput {
    pub dataset: u32,
    /// `[Q × C]`.
    pub logits: Var,
    /// `(segment index, query node)` per logits row.
    pub queries: Vec<(usize, usize)>,
    /// Summed loss of these queries.
    pub loss_sum: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub latents: LatentState,
    /// Per dataset, ascending id.
    pub outputs: Vec<DatasetOutput>,
    /// Summed loss over every query.
    pub loss_sum: Var,
    pub num_queries: usize,
}

/// Parameter counts by component.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamCount {
    pub trunk: usize,
    pub latents: usize,
    pub pos_enc: usize,
    pub adapters: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trunk + self.latents + self.pos_enc + self.adapters
    }
}

#[derive(Clone, Debug)]
pub struct GraphFm<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub signnet: SignNetParams,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub adapters: BTreeMap<u32, DatasetAdapter>,
    pub seed: u64,
}

const TRUNK_TAG: u64 = 0x7472_756e;
const ADAPTER_TAG: u64 = 0x6164_6170;

impl<T: Scalar> GraphFm<T> {
    /// Fresh trunk (no adapters) initialized from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, TRUNK_TAG);
        let signnet = init_signnet(&mut store, config.pe_k, config.pe_phi_hidden, config.pe_rho_hidden, config.pe_dim, &mut rng)?;
        let encoder = init_encoder(&mut store, &config, &mut rng)?;
        let decoder = init_decoder(&mut store, &config, &mut rng)?;
        Ok(GraphFm { config, store, signnet, encoder, decoder, adapters: BTreeMap::new(), seed })
    }

    /// Adds the adapter of dataset `id`; its initialization depends only on
    /// `(seed, id)`, not on the order adapters are added.
    pub fn add_adapter(&mut self, id: u32, num_features: usize, num_classes: usize, task: Task) -> Result<&DatasetAdapter, ModelError> {
        if self.adapters.contains_key(&id) {
            return Err(ModelError::DuplicateDataset(id));
        }
        let mut rng = rng_for(mix(self.seed, ADAPTER_TAG), id as u64);
        self.add_adapter_with(id, num_features, num_classes, task, &mut rng)
    }

    pub fn add_adapter_with(
        &mut self,
        id: u32,
        num_features: usize,
        num_classes: usize,
        task: Task,
        rng: &mut impl Rng,
    ) -> Result<&DatasetAdapter, ModelError> {
        if self.adapters.contains_key(&id) {
            return Err(ModelError::DuplicateDataset(id));
        }
        let a = init_adapter(&mut self.store, id, num_features, num_classes, task, &self.config, rng)?;
        Ok(self.adapters.entry(id).or_insert(a))
    }

    pub fn adapter_for_graph(&mut self, id: u32, g: &Graph) -> Result<&DatasetAdapter, ModelError> {
        self.add_adapter(id, g.num_features(), g.num_classes(), g.task())
    }

    pub fn adapter(&self, id: u32) -> Result<&DatasetAdapter, ModelError> {
        self.adapters.get(&id).ok_or(ModelError::UnknownDataset(id))
    }

    pub fn param_count(&self) -> ParamCount {
        use crate::numerics::Group;
        let mut c = ParamCount::default();
        for (_, p) in self.store.iter() {
            let n = p.value.len();
            match p.group {
                Group::Trunk => c.trunk += n,
                Group::Latents => c.latents += n,
                Group::PosEnc => c.pos_enc += n,
                Group::DatasetMlp(_) | Group::DatasetHead(_) => c.adapters += n,
            }
        }
        c
    }

    /// Full forward pass: tokenize every segment, encode all of them as one
    /// packed batch, then decode each dataset's queries with its own head.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, segments: &[Segment<'_>]) -> Result<ForwardOutput, ModelError> {
        let t = self.config.neighbors;
        let mut seqs = Vec::with_capacity(segments.len());
        let mut content_parts = Vec::with_capacity(segments.len());
        // row of each (segment, node) in the content table
        let mut row_of: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(segments.len());
        let mut base = 0;
        for (si, s) in segments.iter().enumerate() {
            if s.nodes.is_empty() {
                return Err(ModelError::Segment { segment: si, detail: "no encoder nodes".into() });
            }
            if s.neighbors.len() != s.queries.len() {
                return Err(ModelError::Segment { segment: si, detail: "one neighbor list per query required".into() });
            }
            let adapter = self.adapter(s.dataset)?;
            let mut rows = BTreeMap::new();
            let mut content = s.nodes.clone();
            for (i, &u) in s.nodes.iter().enumerate() {
                rows.insert(u, base + i);
            }
            for &u in s.queries.iter().chain(s.neighbors.iter().flatten()) {
                if !rows.contains_key(&u) {
                    rows.insert(u, base + content.len());
                    content.push(u);
                }
            }
            let pe = signnet_encode(tape, bound, &self.signnet, s.basis, Some(&content))?;
            let tok = embed_graph_nodes(tape, bound, adapter, s.graph, si, &content, pe)?;
            let enc_tokens = if content.len() == s.nodes.len() {
                tok.tokens
            } else {
                tape.select_rows(tok.tokens, &(0..s.nodes.len()).collect::<Vec<_>>())?
            };
            seqs.push(TokenSequence { graph_id: si, tokens: enc_tokens, node_ids: s.nodes.clone() });
            content_parts.push(tok.tokens);
            base += content.len();
            row_of.push(rows);
        }
        let batch = pack_batch(tape, &seqs)?;
        let latents = encode(tape, bound, &self.encoder, &batch)?;
        let table = if content_parts.len() == 1 { content_parts[0] } else { tape.concat_rows(&content_parts)? };

        let mut by_dataset: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
        for (si, s) in segments.iter().enumerate() {
            for qi in 0..s.queries.len() {
                by_dataset.entry(s.dataset).or_default().push((si, qi));
            }
        }
        let mut outputs = Vec::with_capacity(by_dataset.len());
        let mut total: Option<Var> = None;
        let mut num_queries = 0;
        for (&dataset, items) in &by_dataset {
            let adapter = self.adapter(dataset)?;
            let mut specs = Vec::with_capacity(items.len());
            let mut queries = Vec::with_capacity(items.len());
            let mut target_nodes: Vec<(usize, usize)> = Vec::with_capacity(items.len());
            for &(si, qi) in items {
                let s = &segments[si];
                let q = s.queries[qi];
                let rows = &row_of[si];
                let mut neighbor_rows: Vec<Option<usize>> = s.neighbors[qi].iter().take(t).map(|u| Some(rows[u])).collect();
                neighbor_rows.resize(t, None);
                specs.push(NodeSequenceSpec { query: q, graph: si, dataset, latent_member: si, self_row: rows[&q], neighbor_rows });
                queries.push((si, q));
                target_nodes.push((si, q));
            }
            let nb = build_node_sequences(tape, bound, &self.decoder, table, &latents, &specs)?;
            let logits = decode(tape, bound, &self.decoder, &nb, adapter)?;
            let targets = targets_for(segments, &target_nodes);
            let ls = loss_sum(tape, logits, &targets)?;
            total = Some(match total {
                None => ls,
                Some(acc) => tape.add(acc, ls)?,
            });
            num_queries += items.len();
            outputs.push(DatasetOutput { dataset, logits, queries, loss_sum: ls });
        }
        let loss_sum = total.ok_or(ModelError::NoQueries)?;
        Ok(ForwardOutput { latents, outputs, loss_sum, num_queries })
    }
}

/// Targets of `(segment, node)` pairs that all belong to one dataset.
fn targets_for(segments: &[Segment<'_>], items: &[(usize, usize)]) -> Targets {
    let first = segments[items[0].0].graph;
    match first.task() {
        Task::Multiclass => Targets::Multiclass(
            items.iter().map(|&(si, u)| segments[si].graph.labels().class_of(u).expect("multiclass labels")).collect(),
        ),
        Task::Multilabel => Targets::Multilabel(
            items
                .iter()
                .flat_map(|&(si, u)| segments[si].graph.labels().bits_of(u).expect("multilabel labels").iter().map(|&b| b as f64))
                .collect(),
        ),
    }
}

/// Maximum decoded queries per segment during pretraining.
pub const QUERY_CAP: usize = 256;

const QUERY_TAG: u64 = 0x7175_6572;

/// Query nodes and neighbor lists of one bucket slice: the train-split nodes
/// of the slice (at most `cap`, seeded subsample), each with `T` sampled
/// neighbors in the parent graph. Randomness depends only on
/// `(seed, step, bucket, slice position)`.
#[allow(clippy::too_many_arguments)]
pub fn slice_segment<'a>(
    datasets: &'a [Dataset],
    mb: &Minibatch,
    bucket: usize,
    position: usize,
    slice: &Slice,
    cfg: &ModelConfig,
    cap: usize,
    seed: u64,
) -> Segment<'a> {
    let sub = &mb.subgraphs[slice.subgraph];
    let d = &datasets[sub.parent];
    let nodes = mb.slice_nodes(slice).to_vec();
    let mut rng = rng_for(mix(mix(seed, QUERY_TAG), mb.step), ((bucket as u64) << 32) | position as u64);
    let mut queries: Vec<usize> = nodes.iter().copied().filter(|&u| d.graph.split_of(u) == Split::Train).collect();
    if queries.len() > cap {
        shuffle(&mut rng, &mut queries);
        queries.truncate(cap);
        queries.sort_unstable();
    }
    let neighbors = queries.iter().map(|&q| sample_neighbors(&d.graph, q, cfg.neighbors, cfg.walk_len, &mut rng)).collect();
    Segment { dataset: d.id, graph: &d.graph, basis: &d.basis, nodes, queries, neighbors }
}

/// Segments of one virtual bucket, slices with no train nodes dropped.
pub fn bucket_segments<'a>(
    datasets: &'a [Dataset],
    mb: &Minibatch,
    bucket: usize,
    cfg: &ModelConfig,
    seed: u64,
) -> Vec<Segment<'a>> {
    mb.plan.buckets[bucket]
        .iter()
        .enumerate()
        .map(|(pos, s)| slice_segment(datasets, mb, bucket, pos, s, cfg, QUERY_CAP, seed))
        .filter(|s| !s.queries.is_empty())
        .collect()
}

/// Whole-graph segments for inference: the encoder sees all of `g`, queries
/// are `nodes`, neighbors drawn with `seed`.
pub fn graph_segments<'a>(d: &'a Dataset, nodes: &[usize], cfg: &ModelConfig, chunk: usize, seed: u64) -> Vec<Segment<'a>> {
    let all: Vec<usize> = (0..d.graph.num_nodes()).collect();
    let mut rng = rng_for(mix(seed, QUERY_TAG), u64::MAX);
    nodes
        .chunks(chunk.max(1))
        .map(|qs| Segment {
            dataset: d.id,
            graph: &d.graph,
            basis: &d.basis,
            nodes: all.clone(),
            queries: qs.to_vec(),
            neighbors: qs.iter().map(|&q| sample_neighbors(&d.graph, q, cfg.neighbors, cfg.walk_len, &mut rng)).collect(),
        })
        .collect()
}

/// 12-node ring with chords, four random features and three classes: the
/// fixture of the full-path gradient check.
pub fn gradcheck_fixture(seed: u64, pe_k: usize) -> Result<Dataset, ModelError> {
    let n = 12;
    let mut rng = rng_for(seed, GRADCHECK_TAG);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    edges.extend((0..n / 2).map(|i| (i, (i + 3 + crate::rng::below(&mut rng, n - 4)) % n)));
    let feats: Vec<f64> = (0..n * 4).map(|_| crate::rng::normal(&mut rng)).collect();
    let y: Vec<u32> = (0..n).map(|i| (i % 3) as u32).collect();
    let labels = crate::graph::Labels::Multiclass { classes: 3, y };
    let (graph, _) = Graph::from_edges(n, &edges, Some((4, feats)), labels, alloc::vec![Split::Train; n])
        .map_err(|e| ModelError::Segment { segment: 0, detail: alloc::format!("{}", e) })?;
    let basis = crate::posenc::laplacian_eigenvectors(&graph, pe_k)
        .map_err(|e| ModelError::Segment { segment: 0, detail: alloc::format!("{}", e) })?;
    Ok(Dataset { id: 0, name: "gradcheck".into(), graph, basis, dataset_lr: None })
}

const GRADCHECK_TAG: u64 = 0x6763_6b66;

/// Central-difference check of the whole forward path (SignNet, tokenizer,
/// encoder, decoder, loss) at f64 on [`gradcheck_fixture`].
pub fn full_path_gradcheck(config: &ModelConfig, seed: u64, gc: GradCheckConfig) -> Result<GradCheckReport, ModelError> {
    let d = gradcheck_fixture(seed, config.pe_k)?;
    let mut m = GraphFm::<f64>::new(config.clone(), seed)?;
    m.adapter_for_graph(0, &d.graph)?;
    let seg = graph_segments(&d, &[0, 4, 9, 11], config, usize::MAX, seed).remove(0);
    let mut store = core::mem::take(&mut m.store);
    let report = grad_check(
        |tape: &mut Tape<f64>, b: &Bound| -> Result<Var, ModelError> {
            Ok(m.forward(tape, b, core::slice::from_ref(&seg))?.loss_sum)
        },
        &mut store,
        gc,
    );
    m.store = store;
    report
}
