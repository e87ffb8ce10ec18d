//! Random-walk subgraph sampling, the snake bucket assigner and the epoch
//! planner that combines them.

use alloc::vec::Vec;

use rand::Rng;

use crate::graph::Graph;
use crate::rng::{below, mix, rng_for, unit, SeededRng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("infeasible plan: subgraphs hold {total} nodes but {buckets} buckets of {budget} need exactly {capacity}")]
    Infeasible { total: usize, buckets: usize, budget: usize, capacity: usize },
    #[error("the corpus is empty")]
    EmptyCorpus,
    #[error("graph {0} has no nodes")]
    EmptyGraph(usize),
    #[error("invalid sampler configuration: {0}")]
    Config(alloc::string::String),
}

/// Induced subgraph of a parent graph, nodes in ascending parent id.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub parent: usize,
    pub nodes: Vec<usize>,
    /// Induced CSR over local indices.
    pub offsets: Vec<usize>,
    pub cols: Vec<u32>,
    pub parent_size: usize,
    /// The requested root count exceeded the parent size and was clamped.
    pub clamped: bool,
}

impl Subgraph {
    /// Induces `nodes` (any order, duplicates removed) on `g`.
    pub fn induce(g: &Graph, parent: usize, mut nodes: Vec<usize>) -> Self {
        nodes.sort_unstable();
        nodes.dedup();
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for &u in &nodes {
            for &v in g.neighbors(u) {
                if let Ok(j) = nodes.binary_search(&(v as usize)) {
                    cols.push(j as u32);
                }
            }
            offsets.push(cols.len());
        }
        Subgraph { parent, nodes, offsets, cols, parent_size: g.num_nodes(), clamped: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of undirected induced edges.
    pub fn num_edges(&self) -> usize {
        self.cols.len() / 2
    }

    /// Local neighbors of local node `i`.
    pub fn local_neighbors(&self, i: usize) -> &[u32] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Induced edges as parent-id pairs `(u, v)` with `u < v`.
    pub fn parent_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for i in 0..self.len() {
            for &j in self.local_neighbors(i) {
                if (j as usize) > i {
                    out.push((self.nodes[i], self.nodes[j as usize]));
                }
            }
        }
        out
    }
}

/// Random-walk subgraph: `r` distinct roots drawn uniformly, a walk of
/// `walk_len` steps from each, and the subgraph induced on every visited node.
/// `r` larger than the graph is clamped (reported through `clamped`).
pub fn saint_subgraph(g: &Graph, parent: usize, roots: usize, walk_len: usize, rng: &mut impl Rng) -> Result<Subgraph, SamplerError> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(SamplerError::EmptyGraph(parent));
    }
    if roots == 0 {
        return Err(SamplerError::Config("at least one root is required".into()));
    }
    let r = roots.min(n);
    let starts = rand::seq::index::sample(rng, n, r).into_vec();
    let mut visited = Vec::with_capacity(r * (walk_len + 1));
    for &s in &starts {
        visited.push(s);
        let mut cur = s;
        for _ in 0..walk_len {
            let nb = g.neighbors(cur);
            if nb.is_empty() {
                break;
            }
            cur = nb[below(rng, nb.len())] as usize;
            visited.push(cur);
        }
    }
    let mut sub = Subgraph::induce(g, parent, visited);
    sub.clamped = roots > n;
    Ok(sub)
}

/// One input to [`snake_assign`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnakeItem {
    /// Nodes to place.
    pub size: usize,
    /// Node count of the parent graph (sort key).
    pub parent_size: usize,
    /// Parent graph id (tie-break).
    pub parent: usize,
}

/// Consecutive nodes `start..start+len` of one subgraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slice {
    pub subgraph: usize,
    pub start: usize,
    pub len: usize,
}

/// Output of [`snake_assign`]: per bucket, the subgraph slices it holds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BucketPlan {
    pub budget: usize,
    pub buckets: Vec<Vec<Slice>>,
}

impl BucketPlan {
    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.iter().map(|s| s.len).sum()).collect()
    }

    /// Number of buckets each subgraph occupies.
    pub fn split_counts(&self, num_subgraphs: usize) -> Vec<usize> {
        let mut out = alloc::vec![0; num_subgraphs];
        for b in &self.buckets {
            for s in b {
                out[s.subgraph] += 1;
            }
        }
        out
    }
}

/// Places subgraphs into `n` buckets of exactly `budget` nodes: largest parent
/// graph first (ties by parent id, then input order), each bucket visited in a
/// back-and-forth sweep that reverses direction at either end.
pub fn snake_assign(items: &[SnakeItem], n: usize, budget: usize) -> Result<BucketPlan, SamplerError> {
    let total: usize = items.iter().map(|i| i.size).sum();
    let capacity = n * budget;
    if n == 0 || budget == 0 || total != capacity {
        return Err(SamplerError::Infeasible { total, buckets: n, budget, capacity });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b].parent_size.cmp(&items[a].parent_size).then(items[a].parent.cmp(&items[b].parent))
    });
    let mut buckets: Vec<Vec<Slice>> = alloc::vec![Vec::new(); n];
    let mut counts = alloc::vec![0usize; n];
    let mut b: isize = 0;
    let mut d: isize = 1;
    for &i in &order {
        let mut left = items[i].size;
        let mut start = 0;
        while left > 0 {
            let bu = b as usize;
            if counts[bu] < budget {
                let take = left.min(budget - counts[bu]);
                counts[bu] += take;
                buckets[bu].push(Slice { subgraph: i, start, len: take });
                start += take;
                left -= take;
            }
            b += d;
            if b >= n as isize || b < 0 {
                d = -d;
                b += d;
            }
        }
    }
    Ok(BucketPlan { budget, buckets })
}

/// Sampler settings: `buckets` workers (N), node budget B, accumulation A,
/// `roots` walk roots and `walk_len` steps per subgraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SamplerConfig {
    pub buckets: usize,
    pub budget: usize,
    pub accum: usize,
    pub roots: usize,
    pub walk_len: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { buckets: 1, budget: 512, accum: 1, roots: 64, walk_len: 2 }
    }
}

impl SamplerConfig {
    pub fn virtual_buckets(&self) -> usize {
        self.buckets * self.accum
    }

    /// Nodes per minibatch, `N·A·B`.
    pub fn tokens_per_step(&self) -> usize {
        self.virtual_buckets() * self.budget
    }

    /// Largest subgraph a single pick can produce.
    pub fn max_subgraph(&self) -> usize {
        self.roots * (self.walk_len + 1)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.buckets == 0 || self.budget == 0 || self.accum == 0 || self.roots == 0 {
            return Err(SamplerError::Config("buckets, budget, accum and roots must be positive".into()));
        }
        if self.tokens_per_step() < self.max_subgraph() {
            return Err(SamplerError::Config(alloc::format!(
                "N·A·B = {} is smaller than the largest subgraph ({} roots × {} nodes per walk)",
                self.tokens_per_step(),
                self.roots,
                self.walk_len + 1
            )));
        }
        Ok(())
    }
}

/// One optimizer step worth of sampled subgraphs and their bucket placement.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub step: u64,
    pub subgraphs: Vec<Subgraph>,
    /// `N·A` virtual buckets.
    pub plan: BucketPlan,
    pub workers: usize,
    pub accum: usize,
}

impl Minibatch {
    /// Virtual bucket indices executed by worker `w`, in accumulation order.
    pub fn worker_buckets(&self, w: usize) -> core::ops::Range<usize> {
        w * self.accum..(w + 1) * self.accum
    }

    /// Nodes of the slice, ascending parent id.
    pub fn slice_nodes(&self, s: &Slice) -> &[usize] {
        &self.subgraphs[s.subgraph].nodes[s.start..s.start + s.len]
    }

    /// Nodes drawn from each dataset, indexed by parent id.
    pub fn nodes_per_dataset(&self, datasets: usize) -> Vec<usize> {
        let mut out = alloc::vec![0; datasets];
        for s in &self.subgraphs {
            out[s.parent] += s.len();
        }
        out
    }
}

/// Drops the `surplus` lowest-degree nodes (parent degree; among equals, the
/// highest id goes first) and re-induces.
fn trim(g: &Graph, sub: &Subgraph, surplus: usize) -> Subgraph {
    let mut ranked = sub.nodes.clone();
    ranked.sort_by(|&a, &b| g.degree(a).cmp(&g.degree(b)).then(b.cmp(&a)));
    let mut keep = ranked.split_off(surplus);
    keep.sort_unstable();
    let mut out = Subgraph::induce(g, sub.parent, keep);
    out.clamped = sub.clamped;
    out
}

/// Picks a dataset with probability proportional to its node count.
fn pick_dataset(cumulative: &[usize], rng: &mut SeededRng) -> usize {
    let total = *cumulative.last().expect("non-empty corpus");
    let x = (unit(rng) * total as f64) as usize;
    let x = x.min(total - 1);
    cumulative.partition_point(|&c| c <= x)
}

const PLAN_TAG: u64 = 0x504c_414e;

/// Minibatch number `step` of the stream for `seed`: datasets drawn by node
/// count, one random-walk subgraph per draw until `N·A·B` nodes are reached,
/// the last subgraph trimmed to fit exactly, then snake assignment.
pub fn plan_minibatch(graphs: &[&Graph], cfg: &SamplerConfig, seed: u64, step: u64) -> Result<Minibatch, SamplerError> {
    cfg.validate()?;
    if graphs.is_empty() {
        return Err(SamplerError::EmptyCorpus);
    }
    let mut cumulative = Vec::with_capacity(graphs.len());
    let mut acc = 0;
    for (i, g) in graphs.iter().enumerate() {
        if g.num_nodes() == 0 {
            return Err(SamplerError::EmptyGraph(i));
        }
        acc += g.num_nodes();
        cumulative.push(acc);
    }
    let target = cfg.tokens_per_step();
    let mut rng = rng_for(mix(seed, PLAN_TAG), step);
    let mut subgraphs: Vec<Subgraph> = Vec::new();
    let mut total = 0;
    while total < target {
        let d = pick_dataset(&cumulative, &mut rng);
        let sub = saint_subgraph(graphs[d], d, cfg.roots, cfg.walk_len, &mut rng)?;
        total += sub.len();
        subgraphs.push(sub);
    }
    if total > target {
        let last = subgraphs.pop().expect("at least one subgraph");
        let surplus = total - target;
        subgraphs.push(trim(graphs[last.parent], &last, surplus));
    }
    let items: Vec<SnakeItem> =
        subgraphs.iter().map(|s| SnakeItem { size: s.len(), parent_size: s.parent_size, parent: s.parent }).collect();
    let plan = snake_assign(&items, cfg.virtual_buckets(), cfg.budget)?;
    Ok(Minibatch { step, subgraphs, plan, workers: cfg.buckets, accum: cfg.accum })
}

/// Minibatches per epoch: one epoch consumes the corpus node count in tokens.
pub fn steps_per_epoch(graphs: &[&Graph], cfg: &SamplerConfig) -> usize {
    let total: usize = graphs.iter().map(|g| g.num_nodes()).sum();
    total.div_ceil(cfg.tokens_per_step()).max(1)
}

/// All minibatches of epoch `epoch` (global steps continue across epochs).
pub fn plan_epoch(graphs: &[&Graph], cfg: &SamplerConfig, seed: u64, epoch: u64) -> Result<Vec<Minibatch>, SamplerError> {
    if graphs.is_empty() {
        return Err(SamplerError::EmptyCorpus);
    }
    let spe = steps_per_epoch(graphs, cfg) as u64;
    (epoch * spe..(epoch + 1) * spe).map(|s| plan_minibatch(graphs, cfg, seed, s)).collect()
}

#[cfg(test)]
mod tests;
