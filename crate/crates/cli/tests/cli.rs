use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth.n_days=90",
    "--set",
    "split={train=40,valid=15,test=15}",
    "--set",
    "model.latent_dim=4",
    "--set",
    "model.head_hidden=4",
    "--set",
    "model.scales=[{kernel=1,stride=1,window=3},{kernel=2,stride=2,window=2}]",
];

fn hermes(args: &[&str], out: &Path, small: bool) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hermes"));
    cmd.args(args).arg("--out").arg(out);
    if small {
        cmd.args(SMALL);
    }
    cmd.output().unwrap()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path).unwrap()
}

fn train_losses(dir: &Path) -> Vec<f64> {
    String::from_utf8(read(dir.join("train_log.csv")))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn synth_is_reproducible_and_records_links() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert!(hermes(&["synth"], &a, false).status.success());
    assert!(hermes(&["synth"], &b, false).status.success());
    for f in ["prices.csv", "industries.csv", "ground_truth.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let industries = String::from_utf8(read(a.join("industries.csv"))).unwrap();
    let rows: Vec<&str> = industries.lines().skip(1).collect();
    assert_eq!(rows.len(), 24);
    let mut labels: Vec<&str> = rows.iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    labels.sort();
    labels.dedup();
    assert_eq!(labels.len(), 3);
    let truth: serde_json::Value = serde_json::from_slice(&read(a.join("ground_truth.json"))).unwrap();
    assert_eq!(truth[0]["leader"], 0);
    assert_eq!(truth[0]["follower"], 1);
    assert_eq!(truth[0]["lag"], 2);
}

#[test]
fn different_seeds_give_different_markets() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert!(hermes(&["synth", "--seed", "1"], &a, false).status.success());
    assert!(hermes(&["synth", "--seed", "2"], &b, false).status.success());
    assert_ne!(read(a.join("prices.csv")), read(b.join("prices.csv")));
}

#[test]
fn zero_epochs_writes_all_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let o = hermes(&["train", "--set", "train.epochs=0"], &out, true);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "metrics.json", "predictions.csv", "train_log.csv", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&read(out.join("metrics.json"))).unwrap();
    assert_eq!(metrics["split"], "test");
    let config = String::from_utf8(read(out.join("config.toml"))).unwrap();
    assert!(config.starts_with("# config hash: "));
    let predictions = String::from_utf8(read(out.join("predictions.csv"))).unwrap();
    assert_eq!(predictions.lines().next(), Some("date,ticker,y_hat,y_true"));
    // 73 samples; the 18 beyond train+valid all go to test.
    assert_eq!(predictions.lines().count(), 1 + 18 * 24);
}

#[test]
fn training_lowers_the_loss() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let o = hermes(&["train", "--set", "train.epochs=15"], &out, true);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let losses = train_losses(&out);
    assert_eq!(losses.len(), 15);
    assert!(losses[14] < losses[0], "{losses:?}");
}

#[test]
fn eval_reproduces_and_guards_the_config_hash() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    assert!(hermes(&["train", "--set", "train.epochs=2"], &out, true).status.success());
    let trained = read(out.join("metrics.json"));
    let (e1, e2) = (root.path().join("e1"), root.path().join("e2"));
    let ckpt = out.join("checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();
    for e in [&e1, &e2] {
        let o = hermes(&["eval", "--set", "train.epochs=2", "--checkpoint", ckpt], e, true);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(e1.join("metrics.json")), read(e2.join("metrics.json")));
    assert_eq!(read(e1.join("predictions.csv")), read(out.join("predictions.csv")));
    let eval: serde_json::Value = serde_json::from_slice(&read(e1.join("metrics.json"))).unwrap();
    let train: serde_json::Value = serde_json::from_slice(&trained).unwrap();
    assert_eq!(eval["ic"], train["ic"]);

    let o = hermes(&["eval", "--set", "train.epochs=3", "--checkpoint", ckpt], &e1, true);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hash mismatch"));
}

#[test]
fn lead_lag_ablation_drops_its_parameters() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let o = hermes(
        &["train", "--set", "train.epochs=0", "--set", "model.ablation.no_lead_lag=true"],
        &out,
        true,
    );
    assert!(o.status.success());
    let ckpt = hermes::numerics::Checkpoint::load(out.join("checkpoint.bin")).unwrap();
    assert!(ckpt.params.names().all(|n| !n.contains("leadlag")));
    assert!(ckpt.params.names().any(|n| n.contains("edge")));
}

#[test]
fn unknown_keys_fail_with_one_line() {
    let root = tempfile::tempdir().unwrap();
    let o = hermes(&["train", "--set", "train.epoch=3"], root.path(), false);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let root = tempfile::tempdir().unwrap();
    let o = hermes(&["train", "--config", "/nonexistent/run.toml"], root.path(), false);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_two_and_keeps_the_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let o = hermes(&["train", "--set", "train.epochs=3", "--set", "train.lr=1e300"], &out, true);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.starts_with("error[numeric]") && err.lines().count() == 1, "{err}");
    assert!(out.join("checkpoint.bin").exists());
    assert!(!out.join("metrics.json").exists());
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let root = tempfile::tempdir().unwrap();
    let o = hermes(&["gradcheck"], root.path(), true);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("max relative error"));
}
