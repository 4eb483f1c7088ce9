use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn graphcaps(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphcaps"))
        .current_dir(dir)
        .env_remove("GRAPHCAPS_DATA")
        .arg("--data-root")
        .arg(data_root())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bad_dataset_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let o = graphcaps(tmp.path(), &["tensorize", "--dataset", "NOPE"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("NOPE_A.txt"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = graphcaps(tmp.path(), &["run", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    let o = graphcaps(tmp.path(), &["run", "--labelling", "pagerank"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tensorize_then_warm_cache_is_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["tensorize", "--dataset", "MUTAG", "--labelling", "bc", "--w", "18", "--k", "10"];
    let first = graphcaps(tmp.path(), &args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("188 tensors of 18x10x8 (written)"), "{}", stdout(&first));
    let cache: Vec<_> = std::fs::read_dir(tmp.path().join("cache")).unwrap().collect();
    assert_eq!(cache.len(), 1);
    let path = cache[0].as_ref().unwrap().path();
    let before = std::fs::metadata(&path).unwrap().modified().unwrap();
    let second = graphcaps(tmp.path(), &args);
    assert!(second.status.success());
    assert!(stdout(&second).contains("warm"), "{}", stdout(&second));
    assert_eq!(std::fs::metadata(&path).unwrap().modified().unwrap(), before);
}

#[test]
fn selftest_passes_and_reports_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let o = graphcaps(tmp.path(), &["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    for suite in ["betweenness-oracle", "canonical-invariance", "gradient-check", "routing-sums"] {
        let line = out.lines().find(|l| l.starts_with(suite)).unwrap();
        assert!(line.contains("PASS") && line.contains('s'), "{line}");
    }
}

#[test]
fn injected_fault_fails_selftest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = graphcaps(tmp.path(), &["selftest", "--inject-fault", "gradient-check"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("gradient-check         FAIL"), "{}", stdout(&o));
}

#[test]
fn small_runs_write_reports_and_replay_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let common = ["--dataset", "MUTAG", "--preset", "small", "--folds", "3", "--epochs", "2"];
    let mut args = vec!["run", "--model", "cnn", "--labelling", "nauty", "--run-id", "cnn"];
    args.extend(common);
    let o = graphcaps(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = tmp.path().join("results/cnn");
    let report = std::fs::read_to_string(run.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "variant,MUTAG");
    assert!(lines[1].starts_with("Canonical + CNN,") && lines[1].contains(" ± "), "{report}");
    for f in ["config.json", "folds.csv", "timings.csv", "report.txt", "traces/fold_00.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let mut args = vec!["run", "--model", "capsules", "--run-id", "caps"];
    args.extend(common);
    let o = graphcaps(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));

    let manifest = tmp.path().join("results/caps/config.json");
    let o = graphcaps(
        tmp.path(),
        &["run", "--from-manifest", manifest.to_str().unwrap(), "--run-id", "again"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(tmp.path().join("results/caps/folds.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("results/again/folds.csv")).unwrap();
    assert_eq!(a, b);

    let o = graphcaps(
        tmp.path(),
        &["report", "results/cnn", "results/caps", "--out", "combined"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(tmp.path().join("combined/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn data_root_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_graphcaps"))
        .current_dir(tmp.path())
        .env("GRAPHCAPS_DATA", data_root())
        .args(["tensorize", "--dataset", "MUTAG", "--labelling", "canonical"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("188 tensors"));
}

#[test]
fn embed_raw_writes_coordinates() {
    let tmp = tempfile::tempdir().unwrap();
    let o = graphcaps(
        tmp.path(),
        &["embed", "--dataset", "MUTAG", "--source", "raw", "--iters", "300", "--run-id", "e"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("results/e");
    let emb = std::fs::read_to_string(dir.join("embeddings.csv")).unwrap();
    assert_eq!(emb.lines().next().unwrap(), "graph_id,class,x,y");
    assert_eq!(emb.lines().count(), 189);
    let dist = std::fs::read_to_string(dir.join("distances.csv")).unwrap();
    assert!(dist.starts_with("source,intra_0,intra_1,intra_pooled,inter\nraw,"));
}
