//! Pretraining over planned minibatches, frozen-trunk finetuning and
//! evaluation.

mod eval;
mod finetune;
mod optim;

pub use eval::{accuracy_report, evaluate, mean_std, predict, EvalError, EvalReport, Predictions};
pub use finetune::{finetune, FinetuneConfig, FinetuneReport};
pub use optim::{
    dataset_lr, lr_schedule, optim_step, trust_ratio, Moments, OptimError, OptimHyper, OptimKind, OptimState, LR_MAX,
    LR_MIN, LR_REF_NODES,
};

use alloc::string::String;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::graph::Graph;
use crate::model::{bucket_segments, Dataset, GraphFm, ModelError, Segment};
use crate::numerics::{GradSet, Group, ParamId, Scalar, Tape};
use crate::sampler::{plan_minibatch, steps_per_epoch, Minibatch, SamplerConfig, SamplerError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("loss diverged at step {step}")]
    Divergence { step: u64 },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub sampler: SamplerConfig,
    /// Optimizer steps `T_s`.
    pub steps: u64,
    /// Warmup length in epochs (one epoch = the corpus node count in tokens).
    pub warmup_epochs: f64,
    /// Explicit warmup steps, overriding `warmup_epochs`.
    pub warmup_steps: Option<u64>,
    /// Rate of trunk, latents and positional encoder.
    pub trunk_lr: f64,
    /// Reference rate of the per-dataset rule.
    pub head_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sampler: SamplerConfig::default(),
            steps: 1000,
            warmup_epochs: 2.0,
            warmup_steps: None,
            trunk_lr: 1e-4,
            head_lr: 1e-3,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn warmup(&self, graphs: &[&Graph]) -> u64 {
        self.warmup_steps
            .unwrap_or_else(|| libm::round(self.warmup_epochs * steps_per_epoch(graphs, &self.sampler) as f64) as u64)
    }
}

/// Loss of one dataset within a step.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetLoss {
    pub dataset: u32,
    pub loss_sum: f64,
    pub queries: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Mean loss over every query of the minibatch.
    pub loss: f64,
    pub queries: usize,
    pub per_dataset: Vec<DatasetLoss>,
    pub lr_trunk: f64,
    /// Nodes consumed so far, this step included.
    pub tokens_seen: u64,
}

/// Result of running one virtual bucket.
#[derive(Clone, Debug)]
pub struct BucketResult<T> {
    /// Gradient of the bucket's summed loss (`None` entries: no gradient path).
    pub grads: GradSet<T>,
    /// `(dataset, loss sum, queries)`.
    pub losses: Vec<(u32, f64, usize)>,
}

/// Runs the virtual buckets of a minibatch. `workers[w]` lists the buckets
/// worker `w` executes in order; results come back indexed by bucket.
pub trait BucketExecutor {
    fn run<T: Scalar, F>(&self, workers: &[Vec<usize>], job: &F) -> Vec<Result<BucketResult<T>, ModelError>>
    where
        F: Fn(usize) -> Result<BucketResult<T>, ModelError> + Sync;
}

/// Executes every bucket on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Serial;

impl BucketExecutor for Serial {
    fn run<T: Scalar, F>(&self, workers: &[Vec<usize>], job: &F) -> Vec<Result<BucketResult<T>, ModelError>>
    where
        F: Fn(usize) -> Result<BucketResult<T>, ModelError> + Sync,
    {
        let n: usize = workers.iter().map(|w| w.len()).sum();
        let mut out: Vec<Option<Result<BucketResult<T>, ModelError>>> = (0..n).map(|_| None).collect();
        for w in workers {
            for &b in w {
                out[b] = Some(job(b));
            }
        }
        out.into_iter().map(|r| r.expect("every bucket assigned")).collect()
    }
}

/// Forward and backward of one bucket's segments.
pub fn bucket_result<T: Scalar>(model: &GraphFm<T>, segments: &[Segment<'_>]) -> Result<BucketResult<T>, ModelError> {
    if segments.is_empty() {
        return Ok(BucketResult { grads: GradSet::empty(model.store.len()), losses: Vec::new() });
    }
    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let out = model.forward(&mut tape, &bound, segments)?;
    let losses = out
        .outputs
        .iter()
        .map(|o| (o.dataset, tape.value(o.loss_sum).item().f64(), o.queries.len()))
        .collect();
    let grads = bound.collect(tape.backward(out.loss_sum)?);
    Ok(BucketResult { grads, losses })
}

/// Pretraining state: model, optimizer and step counter.
pub struct Pretrainer<T> {
    pub model: GraphFm<T>,
    pub opt: OptimState<T>,
    pub cfg: TrainConfig,
    pub step: u64,
    pub tokens_seen: u64,
    warmup: u64,
}

impl<T: Scalar> Pretrainer<T> {
    /// Fresh model with one adapter per dataset (ids must be `0..len`).
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, datasets: &[Dataset]) -> Result<Self, TrainError> {
        let mut model = GraphFm::new(model_cfg, cfg.seed)?;
        for d in datasets {
            model.adapter_for_graph(d.id, &d.graph)?;
        }
        let opt = OptimState::new(&model.store, OptimHyper::lamb(cfg.weight_decay));
        Self::resume(model, opt, cfg, datasets, 0, 0)
    }

    /// Continues from saved state.
    pub fn resume(
        model: GraphFm<T>,
        opt: OptimState<T>,
        cfg: TrainConfig,
        datasets: &[Dataset],
        step: u64,
        tokens_seen: u64,
    ) -> Result<Self, TrainError> {
        if datasets.is_empty() {
            return Err(SamplerError::EmptyCorpus.into());
        }
        for (i, d) in datasets.iter().enumerate() {
            if d.id as usize != i {
                return Err(TrainError::Config(alloc::format!("dataset {} has id {}, expected {}", d.name, d.id, i)));
            }
            model.adapter(d.id)?;
        }
        cfg.sampler.validate()?;
        let graphs: Vec<&Graph> = datasets.iter().map(|d| &d.graph).collect();
        let warmup = cfg.warmup(&graphs);
        if warmup >= cfg.steps {
            return Err(OptimError::Schedule { warmup, total: cfg.steps }.into());
        }
        if !(cfg.trunk_lr >= 0.0 && cfg.head_lr >= 0.0 && cfg.weight_decay >= 0.0) {
            return Err(TrainError::Config("learning rates and weight decay must be non-negative".into()));
        }
        Ok(Pretrainer { model, opt, cfg, step, tokens_seen, warmup })
    }

    pub fn warmup_steps(&self) -> u64 {
        self.warmup
    }

    /// Schedule multiplier applied to every group for optimizer step `step`.
    pub fn schedule(&self, step: u64) -> f64 {
        lr_schedule((step + 1).min(self.cfg.steps), self.warmup, self.cfg.steps, 1.0).expect("validated schedule")
    }

    /// Unscheduled rate of the adapter of `dataset`.
    pub fn dataset_rate(&self, d: &Dataset) -> f64 {
        dataset_lr(self.cfg.head_lr, d.graph.num_nodes(), d.dataset_lr)
    }

    /// Learning rate of every parameter at the current step.
    pub fn rates(&self, datasets: &[Dataset]) -> Vec<f64> {
        let f = self.schedule(self.step);
        self.model
            .store
            .iter()
            .map(|(_, p)| match p.group.dataset() {
                Some(g) => f * self.dataset_rate(&datasets[g as usize]),
                None => f * self.cfg.trunk_lr,
            })
            .collect()
    }

    pub fn plan(&self, datasets: &[Dataset], step: u64) -> Result<Minibatch, TrainError> {
        let graphs: Vec<&Graph> = datasets.iter().map(|d| &d.graph).collect();
        Ok(plan_minibatch(&graphs, &self.cfg.sampler, self.cfg.seed, step)?)
    }

    /// Gradient of the minibatch's mean query loss: buckets run through
    /// `exec`, summed in virtual-bucket order, then divided by the query count.
    pub fn minibatch_gradients<E: BucketExecutor>(
        &self,
        datasets: &[Dataset],
        mb: &Minibatch,
        exec: &E,
    ) -> Result<(GradSet<T>, Vec<(u32, f64, usize)>), TrainError> {
        let nb = mb.plan.num_buckets();
        let segments: Vec<Vec<Segment<'_>>> =
            (0..nb).map(|b| bucket_segments(datasets, mb, b, &self.model.config, self.cfg.seed)).collect();
        let workers: Vec<Vec<usize>> = (0..mb.workers).map(|w| mb.worker_buckets(w).collect()).collect();
        let model = &self.model;
        let results = exec.run(&workers, &|b: usize| bucket_result(model, &segments[b]));
        let mut total = GradSet::empty(self.model.store.len());
        let mut per: Vec<(u32, f64, usize)> = Vec::new();
        for r in results {
            let r = r?;
            total.accumulate(&r.grads);
            for (d, l, q) in r.losses {
                match per.iter_mut().find(|x| x.0 == d) {
                    Some(x) => {
                        x.1 += l;
                        x.2 += q;
                    }
                    None => per.push((d, l, q)),
                }
            }
        }
        per.sort_by_key(|x| x.0);
        let q: usize = per.iter().map(|x| x.2).sum();
        if q > 0 {
            total.scale(T::one() / T::of(q as f64));
        }
        Ok((total, per))
    }

    /// One optimizer step on the next planned minibatch.
    pub fn train_step<E: BucketExecutor>(&mut self, datasets: &[Dataset], exec: &E) -> Result<StepReport, TrainError> {
        let mb = self.plan(datasets, self.step)?;
        self.step_on(datasets, &mb, exec)
    }

    /// One optimizer step on a given minibatch.
    pub fn step_on<E: BucketExecutor>(&mut self, datasets: &[Dataset], mb: &Minibatch, exec: &E) -> Result<StepReport, TrainError> {
        let (grads, per) = self.minibatch_gradients(datasets, mb, exec)?;
        let queries: usize = per.iter().map(|x| x.2).sum();
        let loss_sum: f64 = per.iter().map(|x| x.1).sum();
        let loss = if queries > 0 { loss_sum / queries as f64 } else { 0.0 };
        if !loss.is_finite() {
            return Err(TrainError::Divergence { step: self.step });
        }
        let rates = self.rates(datasets);
        optim_step(&mut self.model.store, &grads, &mut self.opt, |id: ParamId| rates[id.0])?;
        let f = self.schedule(self.step);
        let report = StepReport {
            step: self.step,
            loss,
            queries,
            per_dataset: per
                .iter()
                .map(|&(d, l, q)| DatasetLoss { dataset: d, loss_sum: l, queries: q, lr: f * self.dataset_rate(&datasets[d as usize]) })
                .collect(),
            lr_trunk: f * self.cfg.trunk_lr,
            tokens_seen: self.tokens_seen + mb.plan.counts().iter().sum::<usize>() as u64,
        };
        self.tokens_seen = report.tokens_seen;
        self.step += 1;
        Ok(report)
    }
}

/// Whether a parameter belongs to the adapter of `dataset`.
pub fn is_adapter_of(group: Group, dataset: u32) -> bool {
    group.dataset() == Some(dataset)
}
