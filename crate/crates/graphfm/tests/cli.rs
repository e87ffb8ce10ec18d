//! End-to-end tests of the command-line surface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use graphfm::cli::main_with;
use graphfm::dataset::{read_dataset, write_dataset};
use graphfm::reports::read_metrics;
use graphfm_core::graph::{DatasetManifest, Graph, Labels, Role, Split};
use graphfm_core::synth::{generate_sbm, SbmParams};

/// Runs the command line in-process; returns (exit code, stdout, stderr).
fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = main_with(std::iter::once("graphfm").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn triangle(dir: &Path) -> PathBuf {
    let g = Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)], None, Labels::Multiclass { classes: 2, y: vec![1, 1, 1] }, vec![Split::Train; 3])
        .unwrap()
        .0;
    let path = dir.join("triangle");
    write_dataset(&path, &g, &DatasetManifest::for_graph("triangle", &g, Role::Pretrain)).unwrap();
    path
}

fn sbm_dataset(dir: &Path, name: &str, n: usize, seed: u64, role: Role) -> PathBuf {
    let g = generate_sbm(&SbmParams::new(n, 3, 6.0, 5.0, seed)).unwrap();
    let path = dir.join(name);
    write_dataset(&path, &g, &DatasetManifest::for_graph(name, &g, role)).unwrap();
    path
}

/// File name → contents of every file below `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.clone(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn stats_on_the_triangle() {
    let dir = tempfile::tempdir().unwrap();
    let t = triangle(dir.path());
    let (code, out, _) = run(&["stats", "--corpus", p(&t)]);
    assert_eq!(code, 0);
    assert_eq!(out, "dataset,num_nodes,num_edges,avg_degree,homophily,regime\ntriangle,3,3,2.0,1.0,homophilic\n");
    let csv = dir.path().join("stats.csv");
    assert_eq!(run(&["stats", "--corpus", p(dir.path()), "--out", p(&csv)]).0, 0);
    assert_eq!(fs::read_to_string(&csv).unwrap(), out);
}

#[test]
fn unknown_command_is_a_usage_error() {
    let bin = env!("CARGO_BIN_EXE_graphfm");
    let o = Command::new(bin).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert_eq!(run(&["--budget", "x", "stats"]).0, 2);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn config_violations_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let t = triangle(dir.path());
    let (code, _, err) = run(&["plan", "--dry-run", "--corpus", p(&t), "--budget", "0"]);
    assert_eq!(code, 1);
    assert!(err.contains("budget"), "{}", err);
    // the largest subgraph must fit into a minibatch
    let (code, _, err) = run(&["plan", "--dry-run", "--corpus", p(&t), "--budget", "4", "--roots", "8"]);
    assert_eq!(code, 1, "{}", err);
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(run(&["--config", p(&bad), "stats", "--corpus", p(&t)]).0, 1);
    assert_eq!(run(&["stats"]).0, 1, "missing --corpus");
    assert_eq!(run(&[]).0, 1, "no command");
}

#[test]
fn config_file_is_merged_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = sbm_dataset(dir.path(), "a", 120, 1, Role::Pretrain);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "budget = 32\nroots = 8\nbuckets = 2\n").unwrap();
    let (code, out, err) = run(&["--config", p(&cfg), "plan", "--dry-run", "--corpus", p(&d)]);
    assert_eq!(code, 0, "{}", err);
    assert!(out.contains("2 buckets x 32 nodes"), "{}", out);
    let (_, out, _) = run(&["--config", p(&cfg), "--budget", "40", "plan", "--dry-run", "--corpus", p(&d)]);
    assert!(out.contains("2 buckets x 40 nodes"), "{}", out);
}

#[test]
fn gradcheck_small_preset_passes() {
    let (code, out, err) = run(&["gradcheck", "--preset", "small"]);
    assert_eq!(code, 0, "{}{}", out, err);
    assert!(out.contains("max relative error"));
}

#[test]
fn impossible_gradcheck_tolerance_is_a_numeric_failure() {
    let (code, _, err) = run(&["gradcheck", "--tol", "0", "--max-coords", "2"]);
    assert_eq!(code, 3, "{}", err);
}

#[test]
fn describe_reports_parameter_counts() {
    let (code, out, _) = run(&["--describe", "--preset", "small", "--feature-widths", "16,8", "--classes", "4"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["preset"], "small");
    assert_eq!(v["nominal"], "389K");
    assert_eq!(v["num_adapters"], 2);
    let parts = ["trunk", "latents", "pos_enc", "adapters"].iter().map(|k| v[k].as_u64().unwrap()).sum::<u64>();
    assert_eq!(v["total"].as_u64().unwrap(), parts);
    let (_, medium, _) = run(&["--describe", "--preset", "medium"]);
    let m: serde_json::Value = serde_json::from_str(&medium).unwrap();
    assert!(m["trunk"].as_u64() > v["trunk"].as_u64());
}

#[test]
fn ingest_never_touches_its_input() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("raw");
    fs::create_dir_all(&src).unwrap();
    fs::write(src.join("meta.json"), r#"{"name":"raw","num_nodes":4,"num_features":1,"num_classes":2,"task":"multiclass"}"#).unwrap();
    fs::write(src.join("edges.tsv"), "0\t1\n1\t0\n1\t1\n2\t3\n").unwrap();
    fs::write(src.join("labels.csv"), "0\n0\n1\n1\n").unwrap();
    fs::write(src.join("splits.csv"), "train\ntrain\nval\ntest\n").unwrap();
    let before = snapshot(&src);
    let dest = dir.path().join("clean");
    let (code, out, err) = run(&["ingest", "--input", p(&src), "--out", p(&dest)]);
    assert_eq!(code, 0, "{}", err);
    assert!(out.contains("1 duplicate edges merged, 1 self-loops dropped"), "{}", out);
    assert_eq!(snapshot(&src), before);
    let clean = read_dataset(&dest).unwrap();
    assert_eq!(clean.graph.num_edges(), 2);
    assert_eq!(run(&["ingest", "--input", p(&src), "--out", p(&src)]).0, 1);
    assert_eq!(snapshot(&src), before);
}

#[test]
fn plan_writes_bucket_tables() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    sbm_dataset(&corpus, "a", 150, 1, Role::Pretrain);
    sbm_dataset(&corpus, "b", 60, 2, Role::Pretrain);
    sbm_dataset(&corpus, "c", 80, 3, Role::Finetune);
    let out_dir = dir.path().join("plan");
    let args = ["plan", "--corpus", p(&corpus), "--buckets", "4", "--budget", "32", "--roots", "8", "--epochs", "2", "--out", p(&out_dir)];
    let (code, out, err) = run(&args);
    assert_eq!(code, 0, "{}", err);
    assert!(out.contains("4 buckets x 32 nodes"));
    assert!(!out.contains("\tc\t") && !out.lines().any(|l| l.starts_with("c\t")), "finetune datasets are not planned");
    let plan = fs::read_to_string(out_dir.join("plan.csv")).unwrap();
    assert!(plan.starts_with("step,worker,bucket,slice,dataset,subgraph,subgraph_size,parent_size,start,len,split_count\n"));
    let mut per_bucket: BTreeMap<(u64, usize), usize> = BTreeMap::new();
    for line in plan.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *per_bucket.entry((f[0].parse().unwrap(), f[2].parse().unwrap())).or_default() += f[9].parse::<usize>().unwrap();
    }
    assert!(per_bucket.values().all(|&n| n == 32));
    assert!(fs::read_to_string(out_dir.join("plan_shares.csv")).unwrap().starts_with("dataset,planned_nodes,planned_share,corpus_share\n"));
    // same seed, same plan
    let again = dir.path().join("again");
    let mut args2 = args;
    args2[args2.len() - 1] = p(&again);
    assert_eq!(run(&args2).0, 0);
    assert_eq!(fs::read(again.join("plan.csv")).unwrap(), plan.as_bytes());
}

#[test]
fn pretrain_finetune_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let (code, _, err) = run(&[
        "synth",
        "--count",
        "3",
        "--nvertex-range",
        "60,120",
        "--out-dir",
        p(&corpus),
        "--seed",
        "5",
    ]);
    assert_eq!(code, 0, "{}", err);
    let held = sbm_dataset(dir.path(), "held", 90, 77, Role::Finetune);
    let run_dir = dir.path().join("run");
    let common = ["--budget", "128", "--roots", "16", "--seed", "3", "--warmup-steps", "1"];
    let mut args = vec!["pretrain", "--corpus", p(&corpus), "--out", p(&run_dir), "--steps", "4", "--checkpoint-every", "2"];
    args.extend(common);
    let (code, _, err) = run(&args);
    assert_eq!(code, 0, "{}", err);
    let metrics = read_metrics(&run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.iter().map(|r| r.step).collect::<std::collections::BTreeSet<_>>(), (0..4).collect());
    assert!(metrics.iter().all(|r| r.loss.is_finite() && r.lr_dataset >= 0.0));
    assert!(metrics.iter().any(|r| r.lr_dataset > 0.0));

    let ft = dir.path().join("ft");
    let ck = run_dir.join("checkpoint");
    let (code, out, err) = run(&["finetune", "--checkpoint", p(&ck), "--dataset", p(&held), "--out", p(&ft), "--ft-max-steps", "10"]);
    assert_eq!(code, 0, "{}", err);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(ft.join("finetune.json")).unwrap()).unwrap();
    assert_eq!(summary["trunk_unchanged"], true);
    assert_eq!(summary["adapter_id"], 3);
    assert!(out.contains("\"dataset\""));

    let (code, out, err) = run(&["eval", "--checkpoint", p(&ft.join("checkpoint")), "--dataset", p(&held)]);
    assert_eq!(code, 0, "{}", err);
    let e: serde_json::Value = serde_json::from_str(&out).unwrap();
    let acc = e["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    // the eval matches the finetune-time test accuracy of the same adapter
    assert_eq!(summary["test"]["accuracy"].as_f64().unwrap(), acc);
    // the pretraining checkpoint has no adapter for the held-out dataset
    assert_eq!(run(&["eval", "--checkpoint", p(&ck), "--dataset", p(&held)]).0, 1);

    // the same seed reproduces the run
    let again = dir.path().join("again");
    let mut args = vec!["pretrain", "--corpus", p(&corpus), "--out", p(&again), "--steps", "4"];
    args.extend(common);
    assert_eq!(run(&args).0, 0);
    assert_eq!(read_metrics(&again.join("metrics.csv")).unwrap(), metrics);

    // resuming extends the log of the finished run
    let mut args = vec!["pretrain", "--corpus", p(&corpus), "--out", p(&run_dir), "--steps", "6", "--resume"];
    args.extend(common);
    assert_eq!(run(&args).0, 0);
    let extended = read_metrics(&run_dir.join("metrics.csv")).unwrap();
    assert_eq!(&extended[..metrics.len()], &metrics[..]);
    assert_eq!(extended.iter().map(|r| r.step).max(), Some(5));

    let sweep = dir.path().join("sweep.csv");
    let (code, out, err) = run(&[
        "sweep",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&held),
        "--lrs",
        "1e-3,1e-2",
        "--wds",
        "1e-5",
        "--ft-max-steps",
        "5",
        "--out",
        p(&sweep),
    ]);
    assert_eq!(code, 0, "{}", err);
    assert_eq!(out.lines().count(), 2);
    let table = fs::read_to_string(&sweep).unwrap();
    assert!(table.starts_with("lr,weight_decay,distance,best_val,test_accuracy,steps\n0.001,"), "{}", table);
}

#[test]
fn positional_cache_follows_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = sbm_dataset(dir.path(), "a", 100, 4, Role::Pretrain);
    let cache = dir.path().join("cache");
    let bin = env!("CARGO_BIN_EXE_graphfm");
    let o = Command::new(bin)
        .args(["ingest", "--input", p(&d), "--out", p(&dir.path().join("b"))])
        .env("GRAPHFM_CACHE", &cache)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files: Vec<_> = fs::read_dir(&cache).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(files.len(), 1);
    assert!(files[0].ends_with("-k8.gfpe"), "{:?}", files);
}
