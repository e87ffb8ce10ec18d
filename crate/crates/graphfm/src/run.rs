//! End-to-end pipelines shared by the command line and the tests:
//! pretraining with metrics and checkpoints, finetuning, evaluation, sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graphfm_core::config::ModelConfig;
use graphfm_core::graph::Split;
use graphfm_core::model::{Dataset, GraphFm};
use graphfm_core::numerics::Scalar;
use graphfm_core::trainer::{
    evaluate, finetune, mean_std, EvalReport, FinetuneConfig, FinetuneReport, Pretrainer, Serial, StepReport,
    TrainConfig, TrainError,
};
use serde::Serialize;

use crate::checkpoint::{self, Checkpoint, SaveInfo};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec::Threaded;
use crate::reports::{metrics_rows, write_csv, MetricsLog};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Where and how often pretraining writes its artifacts.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub out: PathBuf,
    pub checkpoint_every: u64,
}

impl Artifacts {
    pub fn checkpoint(&self) -> PathBuf {
        self.out.join(CHECKPOINT_DIR)
    }

    pub fn metrics(&self) -> PathBuf {
        self.out.join(METRICS_FILE)
    }
}

fn names(corpus: &Corpus) -> Vec<String> {
    corpus.manifests.iter().map(|m| m.name.clone()).collect()
}

fn save_trainer<T: Scalar>(dir: &Path, t: &Pretrainer<T>, corpus: &Corpus) -> Result<()> {
    let info = SaveInfo {
        opt: Some(&t.opt),
        train: Some(&t.cfg),
        step: t.step,
        tokens_seen: t.tokens_seen,
        corpus_digest: Some(corpus.digest()),
        names: names(corpus).into_iter().enumerate().map(|(i, n)| (i as u32, n)).collect(),
    };
    checkpoint::save(dir, &t.model, &info)
}

/// Builds a pretrainer, fresh or from a checkpoint of the same corpus. When
/// resuming, the saved training configuration is used with `steps` taken
/// from `train` (so a run can be extended).
pub fn pretrainer<T: Scalar>(
    corpus: &Corpus,
    model: ModelConfig,
    train: TrainConfig,
    resume: Option<Checkpoint<T>>,
) -> Result<Pretrainer<T>> {
    match resume {
        None => Ok(Pretrainer::new(model, train, &corpus.datasets)?),
        Some(ck) => {
            let digest = corpus.digest();
            if ck.manifest.corpus_digest.as_deref() != Some(digest.as_str()) {
                return Err(Error::Validation("checkpoint was trained on a different corpus".into()));
            }
            let saved = ck.manifest.train.clone().ok_or_else(|| Error::Validation("checkpoint has no training state".into()))?;
            let opt = ck.opt.ok_or_else(|| Error::Validation("checkpoint has no optimizer state".into()))?;
            let cfg = TrainConfig { steps: train.steps, ..saved };
            Ok(Pretrainer::resume(ck.model, opt, cfg, &corpus.datasets, ck.manifest.step, ck.manifest.tokens_seen)?)
        }
    }
}

/// Runs `trainer` to its configured step count. With `artifacts`, metrics
/// rows are appended per step and a checkpoint is written at the start,
/// every `checkpoint_every` steps and at the end. On divergence the last
/// good checkpoint stays in place and a numeric error is returned.
pub fn pretrain_loop<T: Scalar>(
    trainer: &mut Pretrainer<T>,
    corpus: &Corpus,
    artifacts: Option<&Artifacts>,
    threaded: bool,
    mut progress: impl FnMut(&StepReport),
) -> Result<Vec<StepReport>> {
    let names = names(corpus);
    let mut log = match artifacts {
        Some(a) => {
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            save_trainer(&a.checkpoint(), trainer, corpus)?;
            Some(MetricsLog::open(&a.metrics(), trainer.step == 0)?)
        }
        None => None,
    };
    let mut reports = Vec::new();
    while trainer.step < trainer.cfg.steps {
        let r = if threaded {
            trainer.train_step(&corpus.datasets, &Threaded)
        } else {
            trainer.train_step(&corpus.datasets, &Serial)
        };
        let report = match r {
            Ok(r) => r,
            Err(TrainError::Divergence { step }) => {
                return Err(Error::Numeric(match artifacts {
                    Some(a) => format!("loss diverged at step {}; last good checkpoint kept at {}", step, a.checkpoint().display()),
                    None => format!("loss diverged at step {}", step),
                }));
            }
            Err(e) => return Err(e.into()),
        };
        if let (Some(log), Some(a)) = (log.as_mut(), artifacts) {
            log.write(&metrics_rows(&report, &names))?;
            if trainer.step % a.checkpoint_every == 0 || trainer.step == trainer.cfg.steps {
                save_trainer(&a.checkpoint(), trainer, corpus)?;
            }
        }
        progress(&report);
        reports.push(report);
    }
    Ok(reports)
}

/// Outcome of finetuning one dataset from a pretrained trunk.
#[derive(Clone, Debug)]
pub struct FinetuneOutcome<T> {
    pub model: GraphFm<T>,
    pub report: FinetuneReport,
    /// Dataset id the new adapter was registered under.
    pub dataset_id: u32,
    /// Largest absolute change of any pre-existing parameter.
    pub trunk_max_delta: f64,
    /// Every pre-existing parameter is bit-identical after finetuning.
    pub trunk_identical: bool,
}

/// Finetunes a fresh adapter for `dataset` on top of `model` (the dataset's
/// id is replaced by the next free adapter id).
pub fn finetune_dataset<T: Scalar>(model: &GraphFm<T>, mut dataset: Dataset, cfg: &FinetuneConfig) -> Result<(FinetuneOutcome<T>, Dataset)> {
    let id = model.adapters.keys().map(|k| k + 1).max().unwrap_or(0);
    dataset.id = id;
    let mut tuned = model.clone();
    let report = finetune(&mut tuned, &dataset, cfg)?;
    let mut delta = 0.0f64;
    let mut identical = true;
    for ((_, a), (_, b)) in model.store.iter().zip(tuned.store.iter()) {
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            if x.f64().to_bits() != y.f64().to_bits() {
                identical = false;
                delta = delta.max((x.f64() - y.f64()).abs());
            }
        }
    }
    Ok((FinetuneOutcome { model: tuned, report, dataset_id: id, trunk_max_delta: delta, trunk_identical: identical }, dataset))
}

/// Saves a finetuned model (no optimizer state) with adapter names.
pub fn save_model<T: Scalar>(dir: &Path, model: &GraphFm<T>, names: BTreeMap<u32, String>, step: u64) -> Result<()> {
    checkpoint::save(dir, model, &SaveInfo { names, step, ..Default::default() })
}

/// Accuracy on a split, as a JSON-friendly summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub split: String,
    pub accuracy: f64,
    pub count: usize,
    pub per_class: Vec<(usize, usize)>,
    pub micro_f1: Option<f64>,
}

impl EvalSummary {
    pub fn new(split: Split, r: &EvalReport) -> Self {
        EvalSummary { split: split.as_str().into(), accuracy: r.accuracy, count: r.count, per_class: r.per_class.clone(), micro_f1: r.micro_f1 }
    }
}

/// Evaluates one split per alternative split assignment and returns the
/// per-assignment accuracies with their mean and sample standard deviation.
pub fn evaluate_splits<T: Scalar>(
    model: &GraphFm<T>,
    d: &Dataset,
    split: Split,
    assignments: &[Vec<Split>],
    seed: u64,
) -> Result<(Vec<f64>, f64, f64)> {
    let mut accs = Vec::with_capacity(assignments.len());
    for a in assignments {
        let mut alt = d.clone();
        alt.graph = alt.graph.with_splits(a.clone())?;
        accs.push(evaluate(model, &alt, split, seed)?.accuracy);
    }
    let (m, s) = mean_std(&accs);
    Ok((accs, m, s))
}

/// One grid point of a finetuning hyperparameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lr: f64,
    pub weight_decay: f64,
    /// Euclidean distance from the default `(1e-3, 1e-5)` in log10 space.
    pub distance: f64,
    pub best_val: f64,
    pub test_accuracy: Option<f64>,
    pub steps: u64,
}

pub fn hyper_distance(lr: f64, wd: f64, base: &FinetuneConfig) -> f64 {
    let a = (lr / base.lr).log10();
    let b = if wd > 0.0 && base.weight_decay > 0.0 { (wd / base.weight_decay).log10() } else { 0.0 };
    (a * a + b * b).sqrt()
}

/// Finetunes `dataset` for every `(lr, wd)` pair, sorted by distance from the
/// default hyperparameters, and writes the table to `out` when given.
pub fn sweep<T: Scalar>(
    model: &GraphFm<T>,
    dataset: &Dataset,
    base: &FinetuneConfig,
    lrs: &[f64],
    wds: &[f64],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &lr in lrs {
        for &wd in wds {
            let cfg = FinetuneConfig { lr, weight_decay: wd, ..base.clone() };
            let (o, _) = finetune_dataset(model, dataset.clone(), &cfg)?;
            rows.push(SweepRow {
                lr,
                weight_decay: wd,
                distance: hyper_distance(lr, wd, &FinetuneConfig::default()),
                best_val: o.report.best_val,
                test_accuracy: o.report.test.as_ref().map(|t| t.accuracy),
                steps: o.report.steps,
            });
        }
    }
    rows.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.lr.total_cmp(&b.lr)).then(a.weight_decay.total_cmp(&b.weight_decay)));
    if let Some(p) = out {
        write_csv(p, &rows)?;
    }
    Ok(rows)
}

/// Fresh optimizer-free model with adapters for every corpus dataset.
pub fn fresh_model<T: Scalar>(corpus: &Corpus, config: ModelConfig, seed: u64) -> Result<GraphFm<T>> {
    let mut m = GraphFm::new(config, seed)?;
    for d in &corpus.datasets {
        m.adapter_for_graph(d.id, &d.graph)?;
    }
    Ok(m)
}
