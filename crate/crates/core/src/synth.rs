//! Degree-corrected stochastic block model generator for synthetic corpora.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{DatasetManifest, Graph, GraphError, Labels, Role, Split, Task};
use crate::rng::{mix, normal, rng_for, shuffle, unit, SeededRng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("invalid sampling range for {0}")]
    BadRange(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Generator parameters; ranges follow the synthetic-corpus table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub nvertex: usize,
    /// In-cluster to out-cluster edge probability ratio.
    pub pq_ratio: f64,
    pub avg_degree: f64,
    pub feature_center_distance: f64,
    pub num_clusters: usize,
    pub cluster_size_slope: f64,
    pub power_exponent: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

pub const NVERTEX: (usize, usize) = (32, 500_000);
pub const PQ_RATIO: (f64, f64) = (0.1, 10.0);
pub const AVG_DEGREE: (f64, f64) = (1.0, 20.0);
pub const CENTER_DISTANCE: (f64, f64) = (0.0, 5.0);
pub const NUM_CLUSTERS: (usize, usize) = (2, 6);
pub const SIZE_SLOPE: (f64, f64) = (0.0, 0.5);
pub const POWER_EXPONENT: (f64, f64) = (0.5, 1.0);

fn check(name: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<(), SynthError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(SynthError::OutOfRange { name, value, lo, hi })
    }
}

impl SbmParams {
    pub fn new(nvertex: usize, num_clusters: usize, pq_ratio: f64, avg_degree: f64, seed: u64) -> Self {
        Self {
            nvertex,
            pq_ratio,
            avg_degree,
            feature_center_distance: 1.0,
            num_clusters,
            cluster_size_slope: 0.0,
            power_exponent: 1.0,
            feature_dim: 16,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        check("nvertex", self.nvertex as f64, (NVERTEX.0 as f64, NVERTEX.1 as f64))?;
        check("pq_ratio", self.pq_ratio, PQ_RATIO)?;
        check("avg_degree", self.avg_degree, AVG_DEGREE)?;
        check("feature_center_distance", self.feature_center_distance, CENTER_DISTANCE)?;
        check("num_clusters", self.num_clusters as f64, (NUM_CLUSTERS.0 as f64, NUM_CLUSTERS.1 as f64))?;
        check("cluster_size_slope", self.cluster_size_slope, SIZE_SLOPE)?;
        check("power_exponent", self.power_exponent, POWER_EXPONENT)?;
        check("feature_dim", self.feature_dim as f64, (1.0, 4096.0))?;
        Ok(())
    }
}

/// Cluster sizes proportional to `1 + slope·k`, rounded by largest remainder
/// (ties to the lower index) so they sum to `n`.
pub fn cluster_sizes(n: usize, clusters: usize, slope: f64) -> Vec<usize> {
    let w: Vec<f64> = (0..clusters).map(|k| 1.0 + slope * k as f64).collect();
    let total: f64 = w.iter().sum();
    let exact: Vec<f64> = w.iter().map(|x| n as f64 * x / total).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| libm::floor(*x) as usize).collect();
    let mut order: Vec<usize> = (0..clusters).collect();
    order.sort_by(|&a, &b| (exact[b] - sizes[b] as f64).total_cmp(&(exact[a] - sizes[a] as f64)).then(a.cmp(&b)));
    let short = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(short) {
        sizes[k] += 1;
    }
    sizes
}

/// Out-cluster probability giving expected mean degree `avg_degree` when
/// in-cluster pairs connect `pq_ratio` times as often (unit mean propensity).
pub fn block_probabilities(sizes: &[usize], pq_ratio: f64, avg_degree: f64) -> (f64, f64) {
    let n: f64 = sizes.iter().sum::<usize>() as f64;
    let per_pout: f64 =
        sizes.iter().map(|&s| s as f64 * ((s as f64 - 1.0) * pq_ratio + (n - s as f64))).sum::<f64>() / n;
    let p_out = avg_degree / per_pout;
    (pq_ratio * p_out, p_out)
}

/// Draws from the density ∝ x^{-γ} on [1, r] by inverse CDF.
fn bounded_power_law(rng: &mut SeededRng, gamma: f64, r: f64) -> f64 {
    let u = unit(rng);
    if (gamma - 1.0).abs() < 1e-12 {
        libm::pow(r, u)
    } else {
        let a = 1.0 - gamma;
        libm::pow(1.0 + u * (libm::pow(r, a) - 1.0), 1.0 / a)
    }
}

/// Degree propensities with mean exactly 1.
pub fn propensities(rng: &mut SeededRng, n: usize, gamma: f64) -> Vec<f64> {
    let r = libm::sqrt(n as f64).max(2.0);
    let mut theta: Vec<f64> = (0..n).map(|_| bounded_power_law(rng, gamma, r)).collect();
    let mean = theta.iter().sum::<f64>() / n as f64;
    for t in &mut theta {
        *t /= mean;
    }
    theta
}

/// Samples each pair `(u, v)`, `u ∈ a`, `v ∈ b`, independently with
/// probability `min(1, θ_u·θ_v·p)`; both lists sorted by θ descending. Uses
/// geometric skipping against the running upper bound (exact, O(n + edges)).
fn sample_block_pair(
    rng: &mut SeededRng,
    a: &[usize],
    b: &[usize],
    same: bool,
    theta: &[f64],
    p: f64,
    edges: &mut Vec<(usize, usize)>,
) {
    for (ia, &u) in a.iter().enumerate() {
        let mut j = if same { ia + 1 } else { 0 };
        if j >= b.len() {
            continue;
        }
        let mut bound = (theta[u] * theta[b[j]] * p).min(1.0);
        while j < b.len() && bound > 0.0 {
            if bound < 1.0 {
                let r = 1.0 - unit(rng); // (0, 1]
                let skip = libm::floor(libm::log(r) / libm::log1p(-bound));
                if skip >= (b.len() - j) as f64 {
                    break;
                }
                j += skip as usize;
            }
            let q = (theta[u] * theta[b[j]] * p).min(1.0);
            if unit(rng) < q / bound {
                edges.push((u, b[j]));
            }
            bound = q;
            j += 1;
        }
    }
}

/// Degree-corrected SBM with Gaussian cluster features and 60/20/20 splits.
pub fn generate_sbm(params: &SbmParams) -> Result<Graph, SynthError> {
    params.validate()?;
    let n = params.nvertex;
    let c = params.num_clusters;
    let mut rng = rng_for(params.seed, 0x5342_4d00);

    let sizes = cluster_sizes(n, c, params.cluster_size_slope);
    let mut labels: Vec<u32> = sizes.iter().enumerate().flat_map(|(k, &s)| core::iter::repeat_n(k as u32, s)).collect();
    shuffle(&mut rng, &mut labels);

    let theta = propensities(&mut rng, n, params.power_exponent);
    let (p_in, p_out) = block_probabilities(&sizes, params.pq_ratio, params.avg_degree);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (u, &l) in labels.iter().enumerate() {
        members[l as usize].push(u);
    }
    for m in &mut members {
        m.sort_by(|&x, &y| theta[y].total_cmp(&theta[x]).then(x.cmp(&y)));
    }
    let mut edges = Vec::new();
    for a in 0..c {
        for b in a..c {
            let p = if a == b { p_in } else { p_out };
            sample_block_pair(&mut rng, &members[a], &members[b], a == b, &theta, p, &mut edges);
        }
    }

    let f = params.feature_dim;
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let dir: Vec<f64> = (0..f).map(|_| normal(&mut rng)).collect();
            let norm = libm::sqrt(dir.iter().map(|x| x * x).sum::<f64>()).max(f64::MIN_POSITIVE);
            dir.iter().map(|x| x / norm * params.feature_center_distance).collect()
        })
        .collect();
    let mut features = Vec::with_capacity(n * f);
    for &l in &labels {
        for &m in &centers[l as usize] {
            features.push(m + normal(&mut rng));
        }
    }

    let splits = random_splits(&mut rng, n, 0.6, 0.2);
    let (g, _) = Graph::from_edges(n, &edges, Some((f, features)), Labels::Multiclass { classes: c, y: labels }, splits)?;
    Ok(g)
}

/// Random train/val/test assignment with the given fractions (rest = test).
pub fn random_splits(rng: &mut SeededRng, n: usize, train: f64, val: f64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(rng, &mut order);
    let n_train = libm::round(train * n as f64) as usize;
    let n_val = (libm::round(val * n as f64) as usize).min(n - n_train);
    let mut splits = vec![Split::Test; n];
    for (rank, &u) in order.iter().enumerate() {
        splits[u] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

/// Per-parameter sampling ranges for a corpus (inclusive bounds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    /// Sampled log-uniformly.
    pub nvertex: (usize, usize),
    pub pq_ratio: (f64, f64),
    pub avg_degree: (f64, f64),
    pub feature_center_distance: (f64, f64),
    pub num_clusters: (usize, usize),
    pub cluster_size_slope: (f64, f64),
    pub power_exponent: (f64, f64),
    pub feature_dim: usize,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        Self {
            nvertex: (32, 2000),
            pq_ratio: PQ_RATIO,
            avg_degree: AVG_DEGREE,
            feature_center_distance: CENTER_DISTANCE,
            num_clusters: NUM_CLUSTERS,
            cluster_size_slope: SIZE_SLOPE,
            power_exponent: POWER_EXPONENT,
            feature_dim: 16,
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<(), SynthError> {
        fn within(name: &'static str, (lo, hi): (f64, f64), bounds: (f64, f64)) -> Result<(), SynthError> {
            if !(lo <= hi) {
                return Err(SynthError::BadRange(name));
            }
            check(name, lo, bounds)?;
            check(name, hi, bounds)
        }
        within("nvertex", (self.nvertex.0 as f64, self.nvertex.1 as f64), (NVERTEX.0 as f64, NVERTEX.1 as f64))?;
        within("pq_ratio", self.pq_ratio, PQ_RATIO)?;
        within("avg_degree", self.avg_degree, AVG_DEGREE)?;
        within("feature_center_distance", self.feature_center_distance, CENTER_DISTANCE)?;
        within(
            "num_clusters",
            (self.num_clusters.0 as f64, self.num_clusters.1 as f64),
            (NUM_CLUSTERS.0 as f64, NUM_CLUSTERS.1 as f64),
        )?;
        within("cluster_size_slope", self.cluster_size_slope, SIZE_SLOPE)?;
        within("power_exponent", self.power_exponent, POWER_EXPONENT)?;
        if self.feature_dim == 0 {
            return Err(SynthError::BadRange("feature_dim"));
        }
        Ok(())
    }

    /// Draws one parameter vector.
    pub fn sample(&self, rng: &mut SeededRng, seed: u64) -> SbmParams {
        let uni = |rng: &mut SeededRng, (lo, hi): (f64, f64)| lo + (hi - lo) * unit(rng);
        let (lo, hi) = (libm::log(self.nvertex.0 as f64), libm::log(self.nvertex.1 as f64));
        let nvertex = (libm::round(libm::exp(lo + (hi - lo) * unit(rng))) as usize).clamp(self.nvertex.0, self.nvertex.1);
        SbmParams {
            nvertex,
            pq_ratio: uni(rng, self.pq_ratio),
            avg_degree: uni(rng, self.avg_degree),
            feature_center_distance: uni(rng, self.feature_center_distance),
            num_clusters: rng.random_range(self.num_clusters.0..=self.num_clusters.1),
            cluster_size_slope: uni(rng, self.cluster_size_slope),
            power_exponent: uni(rng, self.power_exponent),
            feature_dim: self.feature_dim,
            seed,
        }
    }
}

/// One generated corpus member.
#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub graph: Graph,
    pub manifest: DatasetManifest,
    pub params: SbmParams,
}

/// `count` graphs with parameters drawn from `ranges`; reproducible from
/// `master_seed`. An empty request yields an empty corpus.
pub fn generate_corpus(count: usize, ranges: &SamplingRanges, master_seed: u64) -> Result<Vec<SynthDataset>, SynthError> {
    ranges.validate()?;
    let mut rng = rng_for(master_seed, 0x434f_5250);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let params = ranges.sample(&mut rng, mix(master_seed, i as u64 + 1));
        let graph = generate_sbm(&params)?;
        let name: String = format!("sbm-{:03}", i);
        let manifest = DatasetManifest {
            name: name.clone(),
            path: Some(name),
            task: Task::Multiclass,
            num_classes: params.num_clusters,
            num_features: params.feature_dim,
            dataset_lr: None,
            role: Role::Pretrain,
        };
        out.push(SynthDataset { graph, manifest, params });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::homophily_ratio;
    use proptest::prelude::*;

    #[test]
    fn example_block_probabilities() {
        let (p_in, p_out) = block_probabilities(&[50, 50], 9.0, 10.0);
        assert!((p_out - 10.0 / 491.0).abs() < 1e-15);
        assert!((p_out - 0.02037).abs() < 1e-5 && (p_in - 0.1833).abs() < 1e-4);
        assert!((49.0 * p_in + 50.0 * p_out - 10.0).abs() < 1e-12);
    }

    #[test]
    fn example_mean_degree_over_seeds() {
        let mut total = 0.0;
        for seed in 0..20 {
            let g = generate_sbm(&SbmParams::new(100, 2, 9.0, 10.0, seed)).unwrap();
            total += 2.0 * g.num_edges() as f64 / 100.0;
        }
        let mean = total / 20.0;
        assert!((mean - 10.0).abs() <= 1.5, "mean degree {}", mean);
    }

    #[test]
    fn example_homophily_direction() {
        let count = |pq: f64, above: bool| {
            (0..20u64)
                .filter(|&s| {
                    let h = homophily_ratio(&generate_sbm(&SbmParams::new(100, 2, pq, 10.0, s)).unwrap()).unwrap();
                    (h > 0.5) == above
                })
                .count()
        };
        assert!(count(9.0, true) >= 18);
        assert!(count(1.0 / 9.0, false) >= 18);
    }

    #[test]
    fn homophily_monotone_in_pq() {
        let mean_h = |pq: f64| {
            (0..20u64)
                .map(|s| {
                    let mut p = SbmParams::new(200, 3, pq, 8.0, s);
                    p.power_exponent = 0.7;
                    homophily_ratio(&generate_sbm(&p).unwrap()).unwrap()
                })
                .sum::<f64>()
                / 20.0
        };
        let (a, b, c) = (mean_h(0.2), mean_h(1.0), mean_h(5.0));
        assert!(a <= b && b <= c, "{} {} {}", a, b, c);
    }

    #[test]
    fn zero_center_distance_gives_common_distribution() {
        let mut p = SbmParams::new(600, 3, 5.0, 5.0, 3);
        p.feature_center_distance = 0.0;
        p.feature_dim = 4;
        let g = generate_sbm(&p).unwrap();
        // every cluster's empirical mean is near the origin
        for k in 0..3u32 {
            let nodes: Vec<usize> = (0..600).filter(|&u| g.labels().class_of(u) == Some(k as usize)).collect();
            for c in 0..4 {
                let m = nodes.iter().map(|&u| g.feature_row(u)[c]).sum::<f64>() / nodes.len() as f64;
                assert!(m.abs() < 0.35, "cluster {} dim {} mean {}", k, c, m);
            }
        }
    }

    #[test]
    fn center_distance_sets_center_norm() {
        let mut p = SbmParams::new(2000, 2, 5.0, 5.0, 4);
        p.feature_center_distance = 3.0;
        p.feature_dim = 2;
        let g = generate_sbm(&p).unwrap();
        let nodes: Vec<usize> = (0..2000).filter(|&u| g.labels().class_of(u) == Some(0)).collect();
        let m: Vec<f64> =
            (0..2).map(|c| nodes.iter().map(|&u| g.feature_row(u)[c]).sum::<f64>() / nodes.len() as f64).collect();
        let norm = libm::sqrt(m[0] * m[0] + m[1] * m[1]);
        assert!((norm - 3.0).abs() < 0.15, "{}", norm);
    }

    #[test]
    fn equal_cluster_sizes_without_slope() {
        assert_eq!(cluster_sizes(120, 4, 0.0), vec![30; 4]);
        let s = cluster_sizes(101, 3, 0.5);
        assert_eq!(s.iter().sum::<usize>(), 101);
        assert!(s.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let mut p = SbmParams::new(100, 2, 9.0, 10.0, 0);
        p.pq_ratio = 11.0;
        assert!(matches!(p.validate(), Err(SynthError::OutOfRange { name: "pq_ratio", .. })));
        assert!(generate_sbm(&SbmParams::new(31, 2, 1.0, 5.0, 0)).is_err());
        assert!(generate_sbm(&SbmParams::new(100, 7, 1.0, 5.0, 0)).is_err());
    }

    #[test]
    fn splits_are_60_20_20() {
        let g = generate_sbm(&SbmParams::new(100, 2, 2.0, 4.0, 5)).unwrap();
        assert_eq!(g.split_nodes(Split::Train).len(), 60);
        assert_eq!(g.split_nodes(Split::Val).len(), 20);
        assert_eq!(g.split_nodes(Split::Test).len(), 20);
    }

    #[test]
    fn corpus_examples() {
        assert!(generate_corpus(0, &SamplingRanges::default(), 1).unwrap().is_empty());
        let a = generate_corpus(3, &SamplingRanges::default(), 42).unwrap();
        let b = generate_corpus(3, &SamplingRanges::default(), 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.graph, y.graph);
            assert_eq!(x.manifest.role, Role::Pretrain);
        }
        let bad = SamplingRanges { pq_ratio: (0.05, 1.0), ..Default::default() };
        assert!(generate_corpus(1, &bad, 0).is_err());
    }

    #[test]
    fn corpus_of_72_is_valid() {
        let corpus = generate_corpus(72, &SamplingRanges::default(), 7).unwrap();
        assert_eq!(corpus.len(), 72);
        for d in &corpus {
            d.graph.validate().unwrap();
            d.manifest.check_graph(&d.graph).unwrap();
            assert!((32..=2000).contains(&d.graph.num_nodes()));
        }
    }

    /// Brute-force pair sampling has the same edge-count law as the skipping sampler.
    #[test]
    fn skipping_sampler_matches_pairwise_expectation() {
        let mut rng = rng_for(11, 0);
        let theta = propensities(&mut rng, 60, 0.8);
        let mut a: Vec<usize> = (0..60).collect();
        a.sort_by(|&x, &y| theta[y].total_cmp(&theta[x]));
        let p = 0.3;
        let expect: f64 =
            (0..60).flat_map(|u| ((u + 1)..60).map(move |v| (u, v))).map(|(u, v)| (theta[u] * theta[v] * p).min(1.0)).sum();
        let mut total = 0usize;
        let reps = 400;
        for _ in 0..reps {
            let mut e = Vec::new();
            sample_block_pair(&mut rng, &a, &a, true, &theta, p, &mut e);
            total += e.len();
        }
        let mean = total as f64 / reps as f64;
        assert!((mean - expect).abs() < 0.03 * expect, "{} vs {}", mean, expect);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn generated_graphs_satisfy_invariants(seed in any::<u64>(), n in 32usize..300, c in 2usize..=6,
                                               pq in 0.1f64..10.0, deg in 1.0f64..20.0, slope in 0.0f64..0.5,
                                               gamma in 0.5f64..1.0) {
            let p = SbmParams { nvertex: n, pq_ratio: pq, avg_degree: deg, feature_center_distance: 1.0,
                                num_clusters: c, cluster_size_slope: slope, power_exponent: gamma, feature_dim: 3, seed };
            let g = generate_sbm(&p).unwrap();
            prop_assert!(g.validate().is_ok());
            prop_assert_eq!(g.num_nodes(), n);
            prop_assert_eq!(g.num_classes(), c);
        }
    }
}
