//! End-to-end use of the core through its public API: synthesize a corpus,
//! pretrain a few steps, finetune a fresh adapter and evaluate it.

use graphfm_core::model::Dataset;
use graphfm_core::posenc::laplacian_eigenvectors;
use graphfm_core::sampler::{plan_epoch, SamplerConfig};
use graphfm_core::synth::{generate_corpus, generate_sbm, SamplingRanges, SbmParams};
use graphfm_core::trainer::{evaluate, finetune, FinetuneConfig, Pretrainer, Serial, TrainConfig};
use graphfm_core::{Graph, GraphFm, ModelConfig, Split};

fn datasets(count: usize, seed: u64, pe_k: usize) -> Vec<Dataset> {
    let ranges = SamplingRanges { nvertex: (40, 120), ..SamplingRanges::default() };
    generate_corpus(count, &ranges, seed)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let basis = laplacian_eigenvectors(&s.graph, pe_k).unwrap();
            Dataset { id: i as u32, name: s.manifest.name, graph: s.graph, basis, dataset_lr: None }
        })
        .collect()
}

fn train_config(steps: u64) -> TrainConfig {
    TrainConfig {
        sampler: SamplerConfig { buckets: 2, budget: 64, accum: 1, roots: 8, walk_len: 2 },
        steps,
        warmup_steps: Some(1),
        seed: 11,
        ..TrainConfig::default()
    }
}

fn pretrain(ds: &[Dataset], steps: u64) -> (Pretrainer<f32>, Vec<f64>) {
    let mut p = Pretrainer::<f32>::new(ModelConfig::small(), train_config(steps), ds).unwrap();
    let losses = (0..steps).map(|_| p.train_step(ds, &Serial).unwrap().loss).collect();
    (p, losses)
}

#[test]
fn corpus_generation_is_reproducible() {
    let a = generate_corpus(4, &SamplingRanges::default(), 5).unwrap();
    let b = generate_corpus(4, &SamplingRanges::default(), 5).unwrap();
    let c = generate_corpus(4, &SamplingRanges::default(), 6).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.graph == y.graph));
    assert!(a.iter().zip(&c).any(|(x, y)| x.graph != y.graph));
}

#[test]
fn an_epoch_plan_fills_every_bucket_exactly() {
    let ds = datasets(3, 2, 4);
    let graphs: Vec<&Graph> = ds.iter().map(|d| &d.graph).collect();
    let cfg = SamplerConfig { buckets: 3, budget: 50, accum: 2, roots: 6, walk_len: 2 };
    for mb in plan_epoch(&graphs, &cfg, 4, 0).unwrap() {
        assert_eq!(mb.plan.counts(), vec![50; 6]);
        let sampled: usize = mb.subgraphs.iter().map(|s| s.len()).sum();
        assert_eq!(sampled, cfg.tokens_per_step());
    }
}

#[test]
fn pretraining_is_deterministic_and_finite() {
    let ds = datasets(3, 1, 8);
    let (a, la) = pretrain(&ds, 4);
    let (b, lb) = pretrain(&ds, 4);
    assert!(la.iter().all(|l| l.is_finite() && *l > 0.0), "{:?}", la);
    assert_eq!(la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.step, 4);
    for ((_, x), (_, y)) in a.model.store.iter().zip(b.model.store.iter()) {
        assert_eq!(x.value, y.value, "{}", x.name);
    }
}

#[test]
fn finetuning_trains_only_the_new_adapter() {
    let ds = datasets(2, 3, 8);
    let (mut p, _) = pretrain(&ds, 3);
    let held = generate_sbm(&SbmParams::new(90, 3, 6.0, 6.0, 77)).unwrap();
    let basis = laplacian_eigenvectors(&held, 8).unwrap();
    let target = Dataset { id: 2, name: "held".into(), graph: held, basis, dataset_lr: None };
    let before: GraphFm<f32> = p.model.clone();
    let cfg = FinetuneConfig { max_steps: 10, eval_every: 2, ..FinetuneConfig::default() };
    let report = finetune(&mut p.model, &target, &cfg).unwrap();
    assert!(report.steps >= 1 && report.steps <= 10);
    assert!(report.losses.iter().all(|l| l.is_finite()));
    assert!(p.model.store.len() > before.store.len());
    // every pre-existing parameter is bit-identical; the new ones are the adapter's
    for ((_, x), (_, y)) in p.model.store.iter().zip(before.store.iter()) {
        assert_eq!(x.name, y.name);
        assert_eq!(x.value, y.value, "{} changed", x.name);
        assert!(x.trainable == y.trainable);
    }
    assert!(p.model.store.iter().skip(before.store.len()).all(|(_, x)| x.group.dataset() == Some(target.id)));
    assert!(finetune(&mut p.model, &target, &cfg).is_err(), "an id can only be finetuned once");
    let test = evaluate(&p.model, &target, Split::Test, cfg.seed).unwrap();
    assert!((0.0..=1.0).contains(&test.accuracy));
    assert_eq!(Some(test.accuracy), report.test.map(|t| t.accuracy));
}
