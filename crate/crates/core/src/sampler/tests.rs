use super::*;
use crate::graph::{Labels, Split};
use crate::synth::{generate_sbm, SbmParams};
use proptest::prelude::*;

fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::from_edges(n, edges, None, Labels::Multiclass { classes: 2, y: alloc::vec![0; n] }, alloc::vec![Split::Train; n])
        .unwrap()
        .0
}

fn complete(n: usize) -> Graph {
    let mut e = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            e.push((i, j));
        }
    }
    graph(n, &e)
}

fn items(sizes: &[usize]) -> Vec<SnakeItem> {
    // parent sizes follow the input order (G1 largest)
    sizes.iter().enumerate().map(|(i, &s)| SnakeItem { size: s, parent_size: 100 - i, parent: i }).collect()
}

fn sl(subgraph: usize, start: usize, len: usize) -> Slice {
    Slice { subgraph, start, len }
}

#[test]
fn single_bucket_holds_whole_subgraph() {
    let p = snake_assign(&items(&[8]), 1, 8).unwrap();
    assert_eq!(p.buckets, alloc::vec![alloc::vec![sl(0, 0, 8)]]);
}

#[test]
fn hand_trace_two_buckets() {
    let p = snake_assign(&items(&[5, 3]), 2, 4).unwrap();
    assert_eq!(p.buckets, alloc::vec![alloc::vec![sl(0, 0, 4)], alloc::vec![sl(0, 4, 1), sl(1, 0, 3)]]);
}

#[test]
fn hand_trace_three_buckets_with_reversal() {
    let p = snake_assign(&items(&[6, 4, 2]), 3, 4).unwrap();
    assert_eq!(
        p.buckets,
        alloc::vec![alloc::vec![sl(0, 0, 4)], alloc::vec![sl(0, 4, 2), sl(2, 0, 2)], alloc::vec![sl(1, 0, 4)]]
    );
}

#[test]
fn sort_is_by_parent_size_then_parent_id() {
    // input order reversed relative to parent size: the larger parent is placed first
    let it = [
        SnakeItem { size: 2, parent_size: 10, parent: 1 },
        SnakeItem { size: 2, parent_size: 50, parent: 0 },
        SnakeItem { size: 2, parent_size: 10, parent: 0 },
    ];
    let p = snake_assign(&it, 3, 2).unwrap();
    assert_eq!(p.buckets, alloc::vec![alloc::vec![sl(1, 0, 2)], alloc::vec![sl(2, 0, 2)], alloc::vec![sl(0, 0, 2)]]);
}

#[test]
fn equal_subgraphs_one_per_bucket() {
    for n in 1..9 {
        let it: Vec<_> = (0..n).map(|i| SnakeItem { size: 5, parent_size: 5, parent: i }).collect();
        let p = snake_assign(&it, n, 5).unwrap();
        for (b, bucket) in p.buckets.iter().enumerate() {
            assert_eq!(bucket.len(), 1);
            assert_eq!(bucket[0].len, 5);
            let _ = b;
        }
        assert!(p.split_counts(n).iter().all(|&c| c == 1));
    }
}

#[test]
fn infeasible_totals_are_rejected() {
    assert_eq!(
        snake_assign(&items(&[5, 2]), 2, 4),
        Err(SamplerError::Infeasible { total: 7, buckets: 2, budget: 4, capacity: 8 })
    );
    assert!(snake_assign(&items(&[5, 4]), 2, 4).is_err());
    assert!(snake_assign(&[], 0, 4).is_err());
}

fn check_plan(sizes: &[usize], n: usize, budget: usize, p: &BucketPlan) -> Result<(), TestCaseError> {
    prop_assert_eq!(p.num_buckets(), n);
    for c in p.counts() {
        prop_assert_eq!(c, budget);
    }
    // conservation: per subgraph, slices are disjoint and cover 0..size
    let mut covered: Vec<Vec<bool>> = sizes.iter().map(|&s| alloc::vec![false; s]).collect();
    for b in &p.buckets {
        for s in b {
            prop_assert!(s.len > 0);
            for k in s.start..s.start + s.len {
                prop_assert!(!covered[s.subgraph][k], "node placed twice");
                covered[s.subgraph][k] = true;
            }
        }
    }
    prop_assert!(covered.iter().all(|c| c.iter().all(|&x| x)), "node dropped");
    Ok(())
}

/// Random sizes summing to exactly `n·budget`.
fn feasible() -> impl Strategy<Value = (Vec<usize>, usize, usize)> {
    (1usize..9, 1usize..20, prop::collection::vec(1usize..1000, 1..40)).prop_map(|(n, budget, cuts)| {
        let total = n * budget;
        let mut points: Vec<usize> = cuts.into_iter().map(|c| c % total).filter(|&c| c > 0).collect();
        points.sort_unstable();
        points.dedup();
        let mut sizes = Vec::new();
        let mut prev = 0;
        for p in points.into_iter().chain(core::iter::once(total)) {
            sizes.push(p - prev);
            prev = p;
        }
        (sizes, n, budget)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn snake_invariants((sizes, n, budget) in feasible(), parents in prop::collection::vec(1usize..50, 40)) {
        let it: Vec<_> = sizes.iter().enumerate()
            .map(|(i, &s)| SnakeItem { size: s, parent_size: parents[i], parent: i % 7 })
            .collect();
        let p = snake_assign(&it, n, budget).unwrap();
        check_plan(&sizes, n, budget, &p)?;
        // the first subgraph placed meets only empty buckets: ⌈s/B⌉ of them
        let mut order: Vec<usize> = (0..it.len()).collect();
        order.sort_by(|&a, &b| it[b].parent_size.cmp(&it[a].parent_size).then(it[a].parent.cmp(&it[b].parent)));
        let first = order[0];
        prop_assert_eq!(p.split_counts(it.len())[first], sizes[first].div_ceil(budget));
    }
}

#[test]
fn late_subgraphs_can_spread_over_partial_buckets() {
    // 9 → b0, 7 → b1, 7 → b2, then the last 7 visits b2 (3 free), b1 (3), b0 (1):
    // three buckets for seven nodes, one more than ⌈7/10⌉ + 1
    let p = snake_assign(&items(&[9, 7, 7, 7]), 3, 10).unwrap();
    assert_eq!(
        p.buckets,
        alloc::vec![
            alloc::vec![sl(0, 0, 9), sl(3, 6, 1)],
            alloc::vec![sl(1, 0, 7), sl(3, 3, 3)],
            alloc::vec![sl(2, 0, 7), sl(3, 0, 3)],
        ]
    );
    assert_eq!(p.split_counts(4), alloc::vec![1, 1, 1, 3]);
}

#[test]
fn walk_length_zero_gives_roots_only() {
    let g = graph(6, &[(0, 1), (2, 3), (4, 5)]);
    let mut rng = rng_for(3, 0);
    let s = saint_subgraph(&g, 0, 3, 0, &mut rng).unwrap();
    assert_eq!(s.len(), 3);
    for (u, v) in s.parent_edges() {
        assert!(g.has_edge(u, v));
    }
    let path = graph(4, &[(0, 1), (1, 2), (2, 3)]);
    // roots 0 and 2 are not adjacent: no edges
    let sub = Subgraph::induce(&path, 0, alloc::vec![2, 0]);
    assert_eq!(sub.num_edges(), 0);
    assert_eq!(sub.nodes, alloc::vec![0, 2]);
}

#[test]
fn walk_visits_at_most_h_plus_one_nodes() {
    let g = complete(5);
    for seed in 0..200 {
        let mut rng = rng_for(seed, 1);
        let s = saint_subgraph(&g, 0, 1, 3, &mut rng).unwrap();
        assert!((1..=4).contains(&s.len()), "{}", s.len());
        // induced on K5: complete on the chosen nodes
        assert_eq!(s.num_edges(), s.len() * (s.len() - 1) / 2);
    }
}

#[test]
fn subgraph_is_induced_and_repeatable() {
    let g = generate_sbm(&SbmParams::new(300, 3, 4.0, 5.0, 9)).unwrap();
    let a = saint_subgraph(&g, 2, 20, 3, &mut rng_for(5, 5)).unwrap();
    let b = saint_subgraph(&g, 2, 20, 3, &mut rng_for(5, 5)).unwrap();
    assert_eq!(a, b);
    assert!(a.nodes.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a.parent, 2);
    assert_eq!(a.parent_size, 300);
    let edges = a.parent_edges();
    for &(u, v) in &edges {
        assert!(g.has_edge(u, v));
    }
    // every parent edge among the chosen nodes is present
    let mut expected = 0;
    for (i, &u) in a.nodes.iter().enumerate() {
        for &v in &a.nodes[i + 1..] {
            expected += g.has_edge(u, v) as usize;
        }
    }
    assert_eq!(edges.len(), expected);
}

#[test]
fn roots_beyond_graph_size_are_clamped() {
    let g = complete(4);
    let s = saint_subgraph(&g, 0, 10, 0, &mut rng_for(1, 1)).unwrap();
    assert!(s.clamped);
    assert_eq!(s.nodes, alloc::vec![0, 1, 2, 3]);
    assert!(saint_subgraph(&g, 0, 0, 1, &mut rng_for(1, 1)).is_err());
}

fn corpus() -> Vec<Graph> {
    alloc::vec![
        generate_sbm(&SbmParams::new(400, 3, 3.0, 6.0, 1)).unwrap(),
        generate_sbm(&SbmParams::new(150, 2, 5.0, 4.0, 2)).unwrap(),
        generate_sbm(&SbmParams::new(900, 4, 2.0, 8.0, 3)).unwrap(),
    ]
}

#[test]
fn minibatches_fill_every_bucket_exactly() {
    let gs = corpus();
    let refs: Vec<&Graph> = gs.iter().collect();
    let cfg = SamplerConfig { buckets: 3, budget: 70, accum: 2, roots: 12, walk_len: 2 };
    for step in 0..20 {
        let mb = plan_minibatch(&refs, &cfg, 11, step).unwrap();
        assert_eq!(mb.plan.num_buckets(), 6);
        assert!(mb.plan.counts().iter().all(|&c| c == 70));
        let total: usize = mb.subgraphs.iter().map(|s| s.len()).sum();
        assert_eq!(total, 420);
        let sizes: Vec<usize> = mb.subgraphs.iter().map(|s| s.len()).collect();
        check_plan(&sizes, 6, 70, &mb.plan).unwrap();
        for s in &mb.subgraphs {
            for (u, v) in s.parent_edges() {
                assert!(refs[s.parent].has_edge(u, v));
            }
        }
        let mut covered = 0;
        for w in 0..3 {
            for b in mb.worker_buckets(w) {
                for s in &mb.plan.buckets[b] {
                    covered += mb.slice_nodes(s).len();
                }
            }
        }
        assert_eq!(covered, 420);
    }
}

#[test]
fn trimming_drops_lowest_degree_nodes() {
    // star 0..4 plus tail 4-5: degrees 0:4, 1..3:1, 4:2, 5:1
    let g = graph(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (4, 5)]);
    let sub = Subgraph::induce(&g, 0, (0..6).collect());
    let t = trim(&g, &sub, 2);
    // degree-1 nodes 1,2,3,5: the highest ids (5, 3) go first
    assert_eq!(t.nodes, alloc::vec![0, 1, 2, 4]);
    assert_eq!(t.num_edges(), 3);
}

#[test]
fn accumulation_is_plan_equivalent_to_more_workers() {
    let gs = corpus();
    let refs: Vec<&Graph> = gs.iter().collect();
    let a = SamplerConfig { buckets: 2, budget: 64, accum: 2, roots: 10, walk_len: 3 };
    let b = SamplerConfig { buckets: 4, budget: 64, accum: 1, ..a };
    for step in 0..10 {
        let x = plan_minibatch(&refs, &a, 4, step).unwrap();
        let y = plan_minibatch(&refs, &b, 4, step).unwrap();
        assert_eq!(x.subgraphs, y.subgraphs);
        assert_eq!(x.plan, y.plan);
        let xb: Vec<_> = (0..2).flat_map(|w| x.worker_buckets(w)).collect();
        let yb: Vec<_> = (0..4).flat_map(|w| y.worker_buckets(w)).collect();
        assert_eq!(xb, yb);
    }
}

#[test]
fn epoch_stream_is_repeatable_and_seed_dependent() {
    let gs = corpus();
    let refs: Vec<&Graph> = gs.iter().collect();
    let cfg = SamplerConfig { buckets: 2, budget: 100, accum: 1, roots: 16, walk_len: 2 };
    let e1 = plan_epoch(&refs, &cfg, 7, 0).unwrap();
    let e2 = plan_epoch(&refs, &cfg, 7, 0).unwrap();
    assert_eq!(e1, e2);
    assert_eq!(e1.len(), steps_per_epoch(&refs, &cfg));
    assert_eq!(e1.len(), (1450usize).div_ceil(200));
    let next = plan_epoch(&refs, &cfg, 7, 1).unwrap();
    assert_eq!(next[0].step, e1.len() as u64);
    assert_ne!(plan_epoch(&refs, &cfg, 8, 0).unwrap(), e1);
}

#[test]
fn planner_errors() {
    let gs = corpus();
    let refs: Vec<&Graph> = gs.iter().collect();
    let cfg = SamplerConfig::default();
    assert_eq!(plan_epoch(&[], &cfg, 0, 0), Err(SamplerError::EmptyCorpus));
    let small = SamplerConfig { buckets: 1, budget: 8, accum: 1, roots: 4, walk_len: 2 };
    assert!(matches!(plan_minibatch(&refs, &small, 0, 0), Err(SamplerError::Config(_))));
    let zero = SamplerConfig { accum: 0, ..cfg };
    assert!(plan_minibatch(&refs, &zero, 0, 0).is_err());
}

#[test]
fn dataset_draws_follow_node_counts() {
    let cum = [400usize, 550, 1450];
    let mut rng = rng_for(0, 0);
    let mut hits = [0usize; 3];
    for _ in 0..145_000 {
        hits[pick_dataset(&cum, &mut rng)] += 1;
    }
    for (h, e) in hits.iter().zip([40_000.0, 15_000.0, 90_000.0]) {
        assert!((*h as f64 - e).abs() < 5.0 * libm::sqrt(e), "{} vs {}", h, e);
    }
}
