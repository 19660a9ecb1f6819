//! End-to-end runs of the `corpgraph` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn corpgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corpgraph")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic dataset in a fresh directory.
fn dataset(n: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = corpgraph(&["synth", "--n", n, "--years", "5", "--sigma", "0.1", "--seed", "1", "-o", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (dir, data)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_writes_rows_and_sidecar_reproducibly() {
    let (dir, data) = dataset("50");
    let text = std::fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().count(), 1 + 50 * 5);
    let truth = std::fs::read_to_string(dir.path().join("data.truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 1 + 50);
    assert!(dir.path().join("data.run_config.json").exists());

    let again = dir.path().join("again.csv");
    corpgraph(&["synth", "--n", "50", "--years", "5", "--sigma", "0.1", "--seed", "1", "-o", s(&again)]);
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn negative_sigma_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = corpgraph(&["synth", "--sigma", "-0.5", "-o", s(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma"));
}

#[test]
fn map_exports_28_and_38_edge_graphs() {
    let (dir, data) = dataset("30");
    let tree = dir.path().join("tree");
    assert!(corpgraph(&["map", "--data", s(&data), "--out", s(&tree)]).status.success());
    let summary = read_json(&tree.join("summary.json"));
    assert_eq!((summary["edges_min"].as_u64(), summary["edges_max"].as_u64()), (Some(28), Some(28)));
    let one = std::fs::read_dir(tree.join("graphs")).unwrap().next().unwrap().unwrap().path();
    let g = corpgraph::graph::parse_edge_json(&std::fs::read_to_string(one).unwrap()).unwrap();
    assert!(g.is_connected() && g.is_acyclic());

    let plus = dir.path().join("plus");
    assert!(corpgraph(&["map", "--data", s(&data), "--plus-k", "10", "--format", "dot", "--out", s(&plus)]).status.success());
    let summary = read_json(&plus.join("summary.json"));
    assert_eq!((summary["edges_min"].as_u64(), summary["edges_max"].as_u64()), (Some(38), Some(38)));
    let dot_path = std::fs::read_dir(plus.join("graphs")).unwrap().next().unwrap().unwrap().path();
    let dot = std::fs::read_to_string(dot_path).unwrap();
    assert!(dot.starts_with("graph corp_tree_plus {") && dot.trim_end().ends_with('}'));
    assert_eq!(dot.matches(" -- ").count(), 38);
    assert!(plus.join("run_config.json").exists());
}

#[test]
fn train_then_eval_reproduces_validation_metrics() {
    let (dir, data) = dataset("80");
    let run = dir.path().join("run");
    let out = corpgraph(&["train", "--data", s(&data), "--classes", "3", "--graph", "tree", "--epochs", "3", "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["checkpoint.json", "history.csv", "metrics.json", "roc_micro.csv", "run_config.json"] {
        assert!(run.join(file).exists(), "{file}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.starts_with("epoch,lr,train_loss,val_loss,val_acc\n"));

    let ev = dir.path().join("eval");
    let out = corpgraph(&["eval", "--checkpoint", s(&run.join("checkpoint.json")), "--data", s(&data), "--split", "val", "--out", s(&ev)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (a, b) = (read_json(&run.join("metrics.json")), read_json(&ev.join("metrics.json")));
    assert!((a["accuracy"].as_f64().unwrap() - b["accuracy"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(a, b);
}

#[test]
fn eight_class_tree_plus_runs() {
    let (dir, data) = dataset("120");
    let run = dir.path().join("run");
    let out = corpgraph(&["train", "--data", s(&data), "--classes", "8", "--graph", "tree-plus", "--epochs", "1", "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = read_json(&run.join("run_config.json"));
    assert_eq!(cfg["config"]["data"]["graph"], "tree-plus");
    assert_eq!(cfg["config"]["model"]["num_classes"], 8);
}

#[test]
fn unsupported_class_count_lists_the_choices() {
    let out = corpgraph(&["train", "--data", "x.csv", "--classes", "4", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('3') && err.contains('5') && err.contains('8'), "{err}");
}

#[test]
fn flags_override_the_config_file() {
    let (dir, data) = dataset("80");
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "seed = 4\n[train]\nepochs = 2\nbatch_size = 16\n").unwrap();
    let run = dir.path().join("run");
    let out = corpgraph(&["train", "--data", s(&data), "--config", s(&config), "--epochs", "1", "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = &read_json(&run.join("run_config.json"))["config"];
    assert_eq!(cfg["train"]["epochs"], 1);
    assert_eq!(cfg["train"]["batch_size"], 16);
    assert_eq!(cfg["seed"], 4);
    assert_eq!(cfg["train"]["lr_max"], 1e-3);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = corpgraph(&["eval", "--checkpoint", "does-not-exist.json", "--data", "x.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.json"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "enterprise_id,year\nA,2014\n").unwrap();
    let out = corpgraph(&["map", "--data", s(&bad), "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_assets"));
}

#[test]
fn gradcheck_reports_and_echoes_eps() {
    let dir = tempfile::tempdir().unwrap();
    let out = corpgraph(&["gradcheck", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&dir.path().join("gradcheck.json"));
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);

    let out = corpgraph(&["gradcheck", "--eps", "1e-3"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("eps = 1e-3"));
}
