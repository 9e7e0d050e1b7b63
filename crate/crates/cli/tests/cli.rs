use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coremech"))
}

fn sample_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/planting_a_tree.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn build_graph_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    ok(&["build-graph", "--in", p(&sample_corpus()), "--out", p(&graph)]);
    let out = ok(&["stats", "--in", p(&graph)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("scenario,nodes,edges,mean_out_degree,paths,esds,entropy_nats"));
    assert!(lines.next().unwrap().starts_with("planting a tree,14,"));

    let bits = String::from_utf8(ok(&["stats", "--in", p(&graph), "--bits"]).stdout).unwrap();
    assert!(bits.starts_with("scenario,nodes,edges,mean_out_degree,paths,esds,entropy_bits\n"));
}

#[test]
fn gen_queries_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    ok(&["build-graph", "--in", p(&sample_corpus()), "--out", p(&graph)]);
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        ok(&["gen-queries", "--in", p(&graph), "--out", p(out), "--traj", "300", "--seed", "7"]);
    }
    assert_eq!(sha(&a), sha(&b));
    assert_eq!(sha(&a.with_extension("manifest.json")), sha(&b.with_extension("manifest.json")));

    let c = dir.path().join("c.jsonl");
    ok(&["gen-queries", "--in", p(&graph), "--out", p(&c), "--traj", "300", "--seed", "8"]);
    assert_ne!(sha(&a), sha(&c));

    let nodedup = dir.path().join("n.jsonl");
    ok(&["gen-queries", "--in", p(&graph), "--out", p(&nodedup), "--traj", "300", "--seed", "7", "--dedup", "false"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(nodedup.with_extension("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["dedup_removed"], 0);
}

#[test]
fn conjugates_score_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    let data = dir.path().join("d.jsonl");
    let pairs = dir.path().join("p.jsonl");
    let curves = dir.path().join("c.json");
    ok(&["build-graph", "--in", p(&sample_corpus()), "--out", p(&graph)]);
    ok(&["gen-queries", "--in", p(&graph), "--out", p(&data), "--traj", "20", "--seed", "1"]);
    ok(&["gen-conjugates", "--in", p(&data), "--graph", p(&graph), "--out", p(&pairs), "--seed", "2", "--limit", "3"]);
    assert_eq!(std::fs::read_to_string(&pairs).unwrap().lines().count(), 6);

    let responses = dir.path().join("r.jsonl");
    let lines: Vec<String> = std::fs::read_to_string(&data)
        .unwrap()
        .lines()
        .map(|l| {
            let q: serde_json::Value = serde_json::from_str(l).unwrap();
            format!(r#"{{"id":{},"model":"echo","shots":0,"choice":{}}}"#, q["id"], q["gold"])
        })
        .collect();
    std::fs::write(&responses, lines.join("\n")).unwrap();
    let report_csv = dir.path().join("s.csv");
    let out = ok(&["score", "--in", p(&data), "--responses", p(&responses), "--csv", p(&report_csv)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["overall"]["rate"], 1.0);
    assert!(std::fs::read_to_string(&report_csv).unwrap().starts_with("scenario,model,shots,bucket,correct,total,rate"));

    let model = dir.path().join("m.cmpl");
    ok(&["init-model", "--in", p(&pairs), "--out", p(&model), "--seed", "3", "--d-model", "16", "--layers", "3", "--heads", "2"]);
    ok(&["patch-sweep", "--in", p(&pairs), "--model", p(&model), "--out", p(&curves)]);
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&curves).unwrap()).unwrap();
    assert_eq!(file["curves"].as_array().unwrap().len(), 3);
    assert_eq!(file["mean"]["pair_id"], "mean");
    assert_eq!(file["mean"]["layers"].as_array().unwrap().len(), 3);

    let again = dir.path().join("c2.json");
    ok(&["patch-sweep", "--in", p(&pairs), "--model", p(&model), "--out", p(&again)]);
    assert_eq!(sha(&curves), sha(&again));

    let merged = ok(&["patch-sweep", "--merge", p(&curves)]);
    let merged: serde_json::Value = serde_json::from_slice(&merged.stdout).unwrap();
    assert_eq!(merged["mean"], file["mean"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["build-graph", "--in", p(&missing)]).status.code(), Some(2));

    let cyclic = dir.path().join("cyclic.json");
    std::fs::write(
        &cyclic,
        r#"{"scenario":"loop","esds":[{"id":"e1","steps":["a","b"]},{"id":"e2","steps":["b","a"]}],"alignment":{"e1":["a","b"],"e2":["b","a"]}}"#,
    )
    .unwrap();
    let out = run(&["build-graph", "--in", p(&cyclic)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cycle"));
    assert!(out.stdout.is_empty());

    let out = run(&["build-graph", "--in", p(&cyclic), "--break-cycles"]);
    assert_eq!(out.status.code(), Some(0));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"scenario":"x","esds":[{"id":"e1","steps":["a"]}],"alignment":{"e1":["a","b","c"]}}"#).unwrap();
    assert_eq!(run(&["build-graph", "--in", p(&bad)]).status.code(), Some(1));
}

#[test]
fn selftest_passes() {
    let out = ok(&["selftest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 10);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}
