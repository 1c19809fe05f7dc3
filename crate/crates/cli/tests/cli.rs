use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "seed": 1,
  "synth": {"users_per_community": 15, "posts_per_user": 6, "tokens_per_post": 30, "background_tokens": 5000},
  "filter": {"min_word_users": 5},
  "train": {"k": 6, "epochs": 40},
  "cluster": {"k": 3, "k_list": [3], "n_seeds": 2},
  "forecast": {"hidden": 8, "dense": [8], "dropout": [0.1], "learning_rate": [0.01], "epochs": 2},
  "analyze": {"words": ["w0"]}
}"#;

fn dyntmf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyntmf"))
        .current_dir(dir)
        .args(["--config", "cfg.json", "--out", "out"])
        .args(args)
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_variant_lists_the_valid_ones() {
    let dir = setup();
    let o = dyntmf(dir.path(), &["--set", "train.variant=bogus", "train"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    for v in ["cerberus", "noadj", "statcont", "matfact", "sharedmf"] {
        assert!(err.contains(v), "{err}");
    }
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = setup();
    let o = dyntmf(dir.path(), &["--set", "train.nope=1", "show-config"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("train.nope"));
}

#[test]
fn missing_upstream_exits_2() {
    let dir = setup();
    let o = dyntmf(dir.path(), &["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("matrices"), "{}", stderr(&o));
}

#[test]
fn stale_upstream_exits_2() {
    let dir = setup();
    for stage in ["synth", "ingest", "matrices"] {
        assert!(dyntmf(dir.path(), &[stage]).status.success(), "{stage}");
    }
    let o = dyntmf(dir.path(), &["--set", "filter.min_word_users=6", "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stale"), "{}", stderr(&o));
    assert!(dyntmf(dir.path(), &["train"]).status.success());
}

#[test]
fn full_run_writes_every_stage() {
    let dir = setup();
    let o = dyntmf(dir.path(), &["run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    for stage in [
        "synth", "ingest", "matrices", "train", "eval-recon", "cluster", "purity", "forecast", "predict",
        "relevance", "concept", "project",
    ] {
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(stage).join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["stage"], stage);
        for (file, hash) in m["files"].as_object().unwrap() {
            use sha2::Digest;
            let bytes = std::fs::read(out.join(stage).join(file)).unwrap();
            assert_eq!(hex::encode(sha2::Sha256::digest(&bytes)), hash.as_str().unwrap(), "{stage}/{file}");
        }
        assert!(out.join("logs").join(format!("{stage}.json")).is_file());
    }
    let purity: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("purity/purity.json")).unwrap()).unwrap();
    assert_eq!(purity.as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out.join("predict/predictions.csv")).unwrap();
    assert!(csv.starts_with("user_id,community,s,y_hat,y_true\n"));
    assert!(!out.join(".lock").exists());
}

#[test]
fn held_lock_refuses_to_run() {
    let dir = setup();
    std::fs::create_dir_all(dir.path().join("out")).unwrap();
    std::fs::write(dir.path().join("out/.lock"), "").unwrap();
    let o = dyntmf(dir.path(), &["synth"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(".lock"));
}
