//! The `graphfm` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use graphfm_core::config::ModelConfig;
use graphfm_core::graph::{DatasetManifest, Role, Split, Task};
use graphfm_core::model::{full_path_gradcheck, GraphFm};
use graphfm_core::numerics::{GradCheckConfig, Scalar};
use graphfm_core::sampler::plan_epoch;
use graphfm_core::synth::{generate_corpus, SamplingRanges};
use graphfm_core::trainer::evaluate;
use serde::Serialize;

use crate::checkpoint;
use crate::config::{Precision, Settings};
use crate::corpus::{load_corpus, load_single};
use crate::dataset::{read_dataset, read_splits, write_dataset};
use crate::error::{Error, Result};
use crate::pe::{cache_dir_from_env, positional_basis};
use crate::reports::{plan_rows, share_rows, stats_row, write_csv};
use crate::run::{self, Artifacts, EvalSummary};

#[derive(Debug, Parser)]
#[command(name = "graphfm", version, about = "Multi-graph node-classification pretraining toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub settings: Settings,
    /// TOML settings file (keys as the long flags); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print the parameter count of the preset and exit.
    #[arg(long)]
    pub describe: bool,
    /// Input feature widths of the adapters counted by --describe.
    #[arg(long = "feature-widths", value_delimiter = ',', default_value = "1")]
    pub feature_widths: Vec<usize>,
    /// Class count of the adapters counted by --describe.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a raw dataset directory and write its canonical form to --out.
    Ingest {
        /// Raw dataset directory (never modified).
        #[arg(long)]
        input: PathBuf,
    },
    /// Write per-dataset statistics (N, E, average degree, homophily) as CSV.
    Stats,
    /// Generate a synthetic SBM corpus of dataset directories.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Output directory (same as --out).
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
        /// Node count range `lo,hi` (sampled log-uniformly).
        #[arg(long = "nvertex-range", value_parser = parse_usize_range)]
        nvertex_range: Option<(usize, usize)>,
        #[arg(long = "pq-range", value_parser = parse_f64_range)]
        pq_range: Option<(f64, f64)>,
        #[arg(long = "degree-range", value_parser = parse_f64_range)]
        degree_range: Option<(f64, f64)>,
        #[arg(long = "clusters-range", value_parser = parse_usize_range)]
        clusters_range: Option<(usize, usize)>,
        #[arg(long = "center-distance-range", value_parser = parse_f64_range)]
        center_distance_range: Option<(f64, f64)>,
        #[arg(long = "feature-dim")]
        feature_dim: Option<usize>,
        /// Role recorded in each dataset's meta.json.
        #[arg(long, default_value = "pretrain", value_parser = parse_role)]
        role: Role,
    },
    /// Plan bucket assignments for whole epochs without training.
    Plan {
        /// Print the summary instead of writing CSV files.
        #[arg(long = "dry-run")]
        dry_run: bool,
        #[arg(long, default_value_t = 1)]
        epochs: u64,
    },
    /// Pretrain on a corpus, writing metrics.csv and checkpoint/ under --out.
    Pretrain {
        /// Continue from --out/checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Train a fresh adapter for a dataset on a frozen pretrained trunk.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Accuracy of a checkpoint's adapter on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        /// Alternative splits.csv files; reports mean ± std over them.
        #[arg(long = "split-files", value_delimiter = ',')]
        split_files: Vec<PathBuf>,
    },
    /// Central-difference gradient check of the full forward path at f64.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long = "max-coords", default_value_t = 8)]
        max_coords: usize,
    },
    /// Finetune over a grid of (lr, weight decay) and tabulate accuracy.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-3,1e-2")]
        lrs: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1e-5,1e-3")]
        wds: Vec<f64>,
    },
}

fn parse_pair<X: std::str::FromStr>(s: &str) -> std::result::Result<(X, X), String> {
    let (a, b) = s.split_once(',').or_else(|| s.split_once(':')).ok_or_else(|| format!("expected `lo,hi`, got {:?}", s))?;
    let p = |x: &str| x.trim().parse::<X>().map_err(|_| format!("bad bound {:?}", x));
    Ok((p(a)?, p(b)?))
}

fn parse_usize_range(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_pair(s)
}

fn parse_f64_range(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_pair(s)
}

fn parse_role(s: &str) -> std::result::Result<Role, String> {
    match s {
        "pretrain" => Ok(Role::Pretrain),
        "finetune" => Ok(Role::Finetune),
        _ => Err(format!("unknown role {:?} (expected pretrain or finetune)", s)),
    }
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {:?}", s))
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status: 0 success, 1 validation/config failure, 2 usage, 3 numeric.
pub fn main_with<I, S>(args: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e);
            e.exit_code()
        }
    }
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    v.as_ref().ok_or_else(|| Error::Config(format!("{} is required", flag)))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable summary")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(cli: Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> Result<()> {
    let file = match &cli.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    let s = cli.settings.over(&file);
    let cache = cache_dir_from_env();
    let cache = cache.as_deref();
    let io = |e: std::io::Error| Error::io("<stdout>", e);
    if cli.describe {
        return describe(&s, &cli.feature_widths, cli.classes, cache, out);
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no command given (try --help)".into()));
    };
    let model_cfg = s.model()?;
    match command {
        Command::Ingest { input } => {
            let dest = require(&s.out, "--out")?;
            if fs::canonicalize(&input).ok() == fs::canonicalize(dest).ok() {
                return Err(Error::Config("--out must differ from --input (inputs are never modified)".into()));
            }
            let d = read_dataset(&input)?;
            write_dataset(dest, &d.graph, &d.manifest)?;
            positional_basis(&d.graph, model_cfg.pe_k, model_cfg.pe_dim, cache)?;
            writeln!(
                out,
                "{}: {} nodes, {} edges ({} duplicate edges merged, {} self-loops dropped)",
                d.manifest.name,
                d.graph.num_nodes(),
                d.graph.num_edges(),
                d.report.duplicates,
                d.report.self_loops
            )
            .map_err(io)?;
        }
        Command::Stats => {
            let root = require(&s.corpus, "--corpus")?;
            let mut rows = Vec::new();
            for dir in crate::dataset::dataset_dirs(root)? {
                let d = read_dataset(&dir)?;
                rows.push(stats_row(&d.manifest.name, &d.graph)?);
            }
            match &s.out {
                Some(p) => write_csv(p, &rows)?,
                None => {
                    let mut w = csv::Writer::from_writer(Vec::new());
                    for r in &rows {
                        w.serialize(r).map_err(|e| Error::Validation(e.to_string()))?;
                    }
                    out.write_all(&w.into_inner().map_err(|e| Error::Validation(e.to_string()))?).map_err(io)?;
                }
            }
        }
        Command::Synth { count, out_dir, nvertex_range, pq_range, degree_range, clusters_range, center_distance_range, feature_dim, role } => {
            let dest = out_dir.as_ref().or(s.out.as_ref()).ok_or_else(|| Error::Config("--out-dir is required".into()))?;
            let d = SamplingRanges::default();
            let ranges = SamplingRanges {
                nvertex: nvertex_range.unwrap_or(d.nvertex),
                pq_ratio: pq_range.unwrap_or(d.pq_ratio),
                avg_degree: degree_range.unwrap_or(d.avg_degree),
                num_clusters: clusters_range.unwrap_or(d.num_clusters),
                feature_center_distance: center_distance_range.unwrap_or(d.feature_center_distance),
                feature_dim: feature_dim.unwrap_or(d.feature_dim),
                ..d
            };
            if count == 0 {
                return Err(Error::Config("--count must be positive".into()));
            }
            for sd in generate_corpus(count, &ranges, s.seed())? {
                let manifest = DatasetManifest { role, ..sd.manifest };
                write_dataset(&dest.join(&manifest.name), &sd.graph, &manifest)?;
            }
            writeln!(out, "wrote {} datasets to {}", count, dest.display()).map_err(io)?;
        }
        Command::Plan { dry_run, epochs } => {
            let corpus = load_corpus(require(&s.corpus, "--corpus")?, Some(Role::Pretrain), model_cfg.pe_k, model_cfg.pe_dim, cache)?;
            let sampler = s.sampler()?;
            let graphs: Vec<_> = corpus.datasets.iter().map(|d| &d.graph).collect();
            let mut mbs = Vec::new();
            for e in 0..epochs {
                mbs.extend(plan_epoch(&graphs, &sampler, s.seed(), e)?);
            }
            let names: Vec<String> = corpus.manifests.iter().map(|m| m.name.clone()).collect();
            let sizes: Vec<usize> = graphs.iter().map(|g| g.num_nodes()).collect();
            let shares = share_rows(&mbs, &names, &sizes);
            let max_split = mbs.iter().flat_map(|mb| mb.plan.split_counts(mb.subgraphs.len())).max().unwrap_or(0);
            writeln!(
                out,
                "{} minibatches of {} buckets x {} nodes; largest subgraph spread over {} buckets",
                mbs.len(),
                sampler.virtual_buckets(),
                sampler.budget,
                max_split
            )
            .map_err(io)?;
            for r in &shares {
                writeln!(out, "{}\tplanned {:.4}\tcorpus {:.4}", r.dataset, r.planned_share, r.corpus_share).map_err(io)?;
            }
            if !dry_run {
                let dest = require(&s.out, "--out")?;
                write_csv(&dest.join("plan.csv"), &plan_rows(&mbs, &names))?;
                write_csv(&dest.join("plan_shares.csv"), &shares)?;
            }
        }
        Command::Pretrain { resume } => match s.precision() {
            Precision::F32 => pretrain::<f32>(&s, model_cfg, resume, cache, err)?,
            Precision::F64 => pretrain::<f64>(&s, model_cfg, resume, cache, err)?,
        },
        Command::Finetune { checkpoint, dataset } => match s.precision() {
            Precision::F32 => finetune_cmd::<f32>(&s, &checkpoint, &dataset, cache, out)?,
            Precision::F64 => finetune_cmd::<f64>(&s, &checkpoint, &dataset, cache, out)?,
        },
        Command::Eval { checkpoint, dataset, split, split_files } => match s.precision() {
            Precision::F32 => eval_cmd::<f32>(&s, &checkpoint, &dataset, split, &split_files, cache, out)?,
            Precision::F64 => eval_cmd::<f64>(&s, &checkpoint, &dataset, split, &split_files, cache, out)?,
        },
        Command::Gradcheck { tol, max_coords } => {
            let gc = GradCheckConfig { eps: 1e-5, tol, max_coords, seed: s.seed(), ..GradCheckConfig::default() };
            let report = full_path_gradcheck(&model_cfg, s.seed(), gc)?;
            let (worst_name, _) = report.worst().cloned().unwrap_or_default();
            writeln!(
                out,
                "{} coordinates over {} tensors; max relative error {:.3e} ({}); tolerance {:.1e}",
                report.coords_checked,
                report.per_param.len(),
                report.max_rel_error,
                worst_name,
                tol
            )
            .map_err(io)?;
            if !report.passed() {
                return Err(Error::Numeric(format!("gradient check failed: {} has relative error {:.3e}", worst_name, report.max_rel_error)));
            }
        }
        Command::Sweep { checkpoint, dataset, lrs, wds } => {
            let ck = checkpoint::load::<f32>(&checkpoint)?;
            let (d, _) = load_single(&dataset, 0, ck.model.config.pe_k, ck.model.config.pe_dim, cache)?;
            let rows = run::sweep(&ck.model, &d, &s.finetune()?, &lrs, &wds, s.out.as_deref())?;
            for r in &rows {
                writeln!(
                    out,
                    "lr {:.1e}\twd {:.1e}\tdistance {:.3}\tval {:.4}\ttest {}",
                    r.lr,
                    r.weight_decay,
                    r.distance,
                    r.best_val,
                    r.test_accuracy.map_or("-".into(), |a| format!("{:.4}", a))
                )
                .map_err(io)?;
            }
        }
    }
    Ok(())
}

fn describe(s: &Settings, widths: &[usize], classes: usize, cache: Option<&Path>, out: &mut dyn std::io::Write) -> Result<()> {
    let cfg = s.model()?;
    let mut m = GraphFm::<f32>::new(cfg.clone(), s.seed())?;
    let mut adapters: Vec<(usize, usize, Task)> = widths.iter().map(|&f| (f.max(1), classes.max(2), Task::Multiclass)).collect();
    if let Some(root) = &s.corpus {
        let corpus = load_corpus(root, None, cfg.pe_k, cfg.pe_dim, cache)?;
        adapters = corpus.datasets.iter().map(|d| (d.graph.num_features(), d.graph.num_classes(), d.graph.task())).collect();
    }
    for (i, &(f, c, t)) in adapters.iter().enumerate() {
        m.add_adapter(i as u32, f, c, t)?;
    }
    let c = m.param_count();
    #[derive(Serialize)]
    struct Describe<'a> {
        preset: &'a str,
        nominal: &'a str,
        config: &'a ModelConfig,
        trunk: usize,
        latents: usize,
        pos_enc: usize,
        adapters: usize,
        num_adapters: usize,
        total: usize,
    }
    let preset = s.preset();
    let d = Describe {
        preset: match preset {
            graphfm_core::Preset::Small => "small",
            graphfm_core::Preset::Medium => "medium",
            graphfm_core::Preset::Large => "large",
        },
        nominal: preset.label(),
        config: &cfg,
        trunk: c.trunk,
        latents: c.latents,
        pos_enc: c.pos_enc,
        adapters: c.adapters,
        num_adapters: adapters.len(),
        total: c.total(),
    };
    writeln!(out, "{}", json(&d)).map_err(|e| Error::io("<stdout>", e))
}

fn pretrain<T: Scalar>(s: &Settings, model_cfg: ModelConfig, resume: bool, cache: Option<&Path>, err: &mut dyn std::io::Write) -> Result<()> {
    let root = require(&s.corpus, "--corpus")?;
    let dest = require(&s.out, "--out")?;
    let corpus = load_corpus(root, Some(Role::Pretrain), model_cfg.pe_k, model_cfg.pe_dim, cache)?;
    let artifacts = Artifacts { out: dest.clone(), checkpoint_every: s.checkpoint_every() };
    let ck = if resume { Some(checkpoint::load::<T>(&artifacts.checkpoint())?) } else { None };
    let mut trainer = run::pretrainer(&corpus, model_cfg, s.train()?, ck)?;
    let every = (trainer.cfg.steps / 20).max(1);
    run::pretrain_loop(&mut trainer, &corpus, Some(&artifacts), s.threaded(), |r| {
        if r.step % every == 0 {
            let _ = writeln!(err, "step {:>6}  loss {:.4}  lr {:.2e}  tokens {}", r.step, r.loss, r.lr_trunk, r.tokens_seen);
        }
    })?;
    Ok(())
}

/// Finetune summary written to `finetune.json`.
#[derive(Serialize)]
struct FinetuneSummary {
    dataset: String,
    adapter_id: u32,
    steps: u64,
    best_step: u64,
    best_val: f64,
    val_history: Vec<(u64, f64)>,
    test: Option<EvalSummary>,
    trunk_unchanged: bool,
}

fn finetune_cmd<T: Scalar>(s: &Settings, ckpt: &Path, dataset: &Path, cache: Option<&Path>, out: &mut dyn std::io::Write) -> Result<()> {
    let dest = require(&s.out, "--out")?;
    let ck = checkpoint::load::<T>(ckpt)?;
    let (d, manifest) = load_single(dataset, 0, ck.model.config.pe_k, ck.model.config.pe_dim, cache)?;
    let (o, d) = run::finetune_dataset(&ck.model, d, &s.finetune()?)?;
    let mut names: BTreeMap<u32, String> = ck.manifest.adapters.iter().map(|a| (a.id, a.name.clone())).collect();
    names.insert(o.dataset_id, manifest.name.clone());
    run::save_model(&dest.join(run::CHECKPOINT_DIR), &o.model, names, ck.manifest.step)?;
    let summary = FinetuneSummary {
        dataset: d.name.clone(),
        adapter_id: o.dataset_id,
        steps: o.report.steps,
        best_step: o.report.best_step,
        best_val: o.report.best_val,
        val_history: o.report.val_history.clone(),
        test: o.report.test.as_ref().map(|t| EvalSummary::new(Split::Test, t)),
        trunk_unchanged: o.trunk_identical,
    };
    let text = json(&summary);
    write_file(&dest.join("finetune.json"), &(text.clone() + "\n"))?;
    writeln!(out, "{}", text).map_err(|e| Error::io("<stdout>", e))
}

fn eval_cmd<T: Scalar>(
    s: &Settings,
    ckpt: &Path,
    dataset: &Path,
    split: Split,
    split_files: &[PathBuf],
    cache: Option<&Path>,
    out: &mut dyn std::io::Write,
) -> Result<()> {
    let ck = checkpoint::load::<T>(ckpt)?;
    let (mut d, manifest) = load_single(dataset, 0, ck.model.config.pe_k, ck.model.config.pe_dim, cache)?;
    let adapter = ck
        .manifest
        .adapter_by_name(&manifest.name)
        .ok_or_else(|| Error::Validation(format!("checkpoint has no adapter for dataset {:?}", manifest.name)))?;
    d.id = adapter.id;
    let text = if split_files.is_empty() {
        let r = evaluate(&ck.model, &d, split, s.seed())?;
        json(&EvalSummary::new(split, &r))
    } else {
        let assignments = split_files.iter().map(|p| read_splits(p, d.graph.num_nodes())).collect::<Result<Vec<_>>>()?;
        let (accs, mean, std) = run::evaluate_splits(&ck.model, &d, split, &assignments, s.seed())?;
        #[derive(Serialize)]
        struct Multi {
            split: String,
            accuracies: Vec<f64>,
            mean: f64,
            std: f64,
        }
        json(&Multi { split: split.as_str().into(), accuracies: accs, mean, std })
    };
    if let Some(p) = &s.out {
        write_file(p, &(text.clone() + "\n"))?;
    }
    writeln!(out, "{}", text).map_err(|e| Error::io("<stdout>", e))
}
