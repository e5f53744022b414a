use std::path::Path;
use std::process::{Command, Output};

fn dexgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dexgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_smoke(dir: &Path, extra: &str) -> String {
    let out = dexgraph(&["scenario", "smoke"]);
    assert!(out.status.success());
    let mut text = String::from_utf8(out.stdout).unwrap();
    text = text
        .replace("t_rl = 200", "t_rl = 40")
        .replace("rounds = 20", "rounds = 4");
    text.push_str(extra);
    let path = dir.join("smoke.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke(dir.path(), "");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert!(
        dexgraph(&["run", &cfg, "--jobs", "1", "--out", a.to_str().unwrap()])
            .status
            .success()
    );
    assert!(
        dexgraph(&["run", &cfg, "--jobs", "3", "--out", b.to_str().unwrap()])
            .status
            .success()
    );
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    assert!(a.starts_with(b"scenario,method,seed,round,metric,value,d2d_joules,d2s_joules\n"));
}

#[test]
fn seed_flag_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke(dir.path(), "");
    let csv = dir.path().join("r.csv");
    assert!(
        dexgraph(&["run", &cfg, "--seed", "7", "--out", csv.to_str().unwrap()])
            .status
            .success()
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(2) == Some("7")));
    let out = dexgraph(&["summarize", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("scenario,method,metric,seeds,final_mean"));
    assert!(summary.contains("smoke,ours,accuracy,1,"));
}

#[test]
fn partial_failure_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // a single pool point per class leaves devices too small for k-means
    let cfg = write_smoke(dir.path(), "");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("mode = \"supervised\"", "mode = \"unsupervised\"")
        .replace("pool_per_class = 100", "pool_per_class = 1")
        .replace("pca_dim = 3", "pca_dim = 2")
        .replace("kmeans_clusters = 4", "kmeans_clusters = 2");
    std::fs::write(&cfg, text).unwrap();
    let out = dexgraph(&["run", &cfg]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains(",error,NaN,"));
}

#[test]
fn oracle_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke(dir.path(), "");
    let out = dexgraph(&["oracle", &cfg]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("smoke,oracle,0,0,graph_objective,"));
    let out = dexgraph(&["scenario", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("valid names"));
    let out = dexgraph(&["run", "/nonexistent.toml"]);
    assert_eq!(out.status.code(), Some(1));
}
