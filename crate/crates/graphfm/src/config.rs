//! Run settings: command-line flags merged over an optional TOML file.

use std::path::{Path, PathBuf};

use graphfm_core::config::{ModelConfig, Preset};
use graphfm_core::sampler::SamplerConfig;
use graphfm_core::trainer::{FinetuneConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Every tunable setting. Each field is optional so that a config file and
/// the command line can both supply values; flags win.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Model size preset: small, medium or large.
    #[arg(long, global = true, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Master seed; every command is deterministic given it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Simulated workers N (buckets per accumulation round).
    #[arg(long, global = true)]
    pub buckets: Option<usize>,
    /// Node budget B per bucket.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Gradient accumulation rounds A.
    #[arg(long, global = true)]
    pub accum: Option<usize>,
    /// Random-walk length h of subgraph sampling.
    #[arg(long = "walk-len", global = true)]
    #[serde(alias = "walk-len")]
    pub walk_len: Option<usize>,
    /// Walk roots r per sampled subgraph.
    #[arg(long, global = true)]
    pub roots: Option<usize>,
    /// Neighbor slots T per decoded node.
    #[arg(long, global = true)]
    pub neighbors: Option<usize>,
    /// Optimizer steps.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Output directory or file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Corpus root: a dataset directory or a directory of them.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    /// Run the N simulated workers on N threads (sets N when --buckets is absent).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long = "trunk-lr", global = true)]
    #[serde(alias = "trunk-lr")]
    pub trunk_lr: Option<f64>,
    /// Reference rate of the per-dataset learning-rate rule.
    #[arg(long = "head-lr", global = true)]
    #[serde(alias = "head-lr")]
    pub head_lr: Option<f64>,
    #[arg(long = "weight-decay", global = true)]
    #[serde(alias = "weight-decay")]
    pub weight_decay: Option<f64>,
    #[arg(long = "warmup-steps", global = true)]
    #[serde(alias = "warmup-steps")]
    pub warmup_steps: Option<u64>,
    #[arg(long = "warmup-epochs", global = true)]
    #[serde(alias = "warmup-epochs")]
    pub warmup_epochs: Option<f64>,
    /// Save a checkpoint every this many steps (and at the end).
    #[arg(long = "checkpoint-every", global = true)]
    #[serde(alias = "checkpoint-every")]
    pub checkpoint_every: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub dtype: Option<Precision>,
    /// Finetune learning rate.
    #[arg(long = "ft-lr", global = true)]
    #[serde(alias = "ft-lr")]
    pub ft_lr: Option<f64>,
    /// Finetune weight decay.
    #[arg(long = "ft-weight-decay", global = true)]
    #[serde(alias = "ft-weight-decay")]
    pub ft_weight_decay: Option<f64>,
    #[arg(long = "ft-max-steps", global = true)]
    #[serde(alias = "ft-max-steps")]
    pub ft_max_steps: Option<u64>,
    #[arg(long = "ft-eval-every", global = true)]
    #[serde(alias = "ft-eval-every")]
    pub ft_eval_every: Option<u64>,
    #[arg(long = "ft-patience", global = true)]
    #[serde(alias = "ft-patience")]
    pub ft_patience: Option<u64>,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| format!("unknown preset {:?} (expected small, medium or large)", s))
}

macro_rules! merge_fields {
    ($hi:expr, $lo:expr; $($f:ident),*) => {
        Settings { $($f: $hi.$f.clone().or_else(|| $lo.$f.clone())),* }
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }

    /// `self` with unset fields taken from `lower`.
    pub fn over(&self, lower: &Settings) -> Settings {
        merge_fields!(self, lower; preset, seed, buckets, budget, accum, walk_len, roots, neighbors, steps, out,
            corpus, workers, trunk_lr, head_lr, weight_decay, warmup_steps, warmup_epochs, checkpoint_every,
            dtype, ft_lr, ft_weight_decay, ft_max_steps, ft_eval_every, ft_patience)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn preset(&self) -> Preset {
        self.preset.unwrap_or(Preset::Small)
    }

    pub fn precision(&self) -> Precision {
        self.dtype.unwrap_or(Precision::F32)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::preset(self.preset());
        if let Some(t) = self.neighbors {
            m.neighbors = t;
        }
        Ok(m)
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        let d = SamplerConfig::default();
        let buckets = match (self.buckets, self.workers) {
            (Some(b), Some(w)) if w > 1 && w != b => {
                return Err(Error::Config(format!("--workers {} disagrees with --buckets {}", w, b)));
            }
            (Some(b), _) => b,
            (None, Some(w)) if w > 0 => w,
            _ => d.buckets,
        };
        let s = SamplerConfig {
            buckets,
            budget: self.budget.unwrap_or(d.budget),
            accum: self.accum.unwrap_or(d.accum),
            roots: self.roots.unwrap_or(d.roots),
            walk_len: self.walk_len.unwrap_or(d.walk_len),
        };
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(s)
    }

    /// Whether bucket workers run on threads.
    pub fn threaded(&self) -> bool {
        self.workers.is_some_and(|w| w > 1)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let t = TrainConfig {
            sampler: self.sampler()?,
            steps: self.steps.unwrap_or(d.steps),
            warmup_epochs: self.warmup_epochs.unwrap_or(d.warmup_epochs),
            warmup_steps: self.warmup_steps.or(d.warmup_steps),
            trunk_lr: self.trunk_lr.unwrap_or(d.trunk_lr),
            head_lr: self.head_lr.unwrap_or(d.head_lr),
            weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
            seed: self.seed(),
        };
        if t.steps == 0 {
            return Err(Error::Config("--steps must be positive".into()));
        }
        for (name, v) in [("trunk_lr", t.trunk_lr), ("head_lr", t.head_lr), ("weight_decay", t.weight_decay), ("warmup_epochs", t.warmup_epochs)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} must be a finite non-negative number, got {}", name, v)));
            }
        }
        Ok(t)
    }

    pub fn finetune(&self) -> Result<FinetuneConfig> {
        let d = FinetuneConfig::default();
        let f = FinetuneConfig {
            lr: self.ft_lr.unwrap_or(d.lr),
            weight_decay: self.ft_weight_decay.unwrap_or(d.weight_decay),
            max_steps: self.ft_max_steps.unwrap_or(d.max_steps),
            eval_every: self.ft_eval_every.unwrap_or(d.eval_every),
            patience: self.ft_patience.unwrap_or(d.patience),
            batch: d.batch,
            seed: self.seed(),
        };
        if !(f.lr > 0.0 && f.lr.is_finite() && f.weight_decay >= 0.0 && f.weight_decay.is_finite()) {
            return Err(Error::Config("finetune lr must be positive and weight decay non-negative".into()));
        }
        if f.eval_every == 0 || f.max_steps == 0 {
            return Err(Error::Config("finetune max steps and eval interval must be positive".into()));
        }
        Ok(f)
    }

    pub fn checkpoint_every(&self) -> u64 {
        self.checkpoint_every.unwrap_or(100).max(1)
    }
}
