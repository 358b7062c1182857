use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[synthetic]
n_users = 12
n_items = 12
horizon = 20.0

[train]
batch_size = 40
epochs = 2
lr = 0.001

[model]
dim = 8
time_dim = 4
edge_dim = 4

[enhancer]
k_rand = 2
hop_counts = [2, 2]
"#;

fn gtgib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtgib")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn verify_reports_zero_failures() {
    let out = gtgib(&["verify", "--instances", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["failures"], 0);
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = gtgib(&["train", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.toml") && err.to_lowercase().contains("not found"), "{err}");
}

#[test]
fn unknown_flags_print_usage() {
    let out = gtgib(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(gtgib(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gtgib(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = gtgib(&["train", "--config", &cfg, "--inductive-frac", "1.5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let out = gtgib(&["ablate", "--config", &cfg, "--variants", "full,nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("ablate");
    let out = gtgib(&[
        "ablate", "--config", &cfg, "--variants", "full,no_enhancer", "--seeds", "5", "--epochs", "1",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    let header: Vec<&str> = lines[0].split(',').collect();
    for col in ["trans_mean", "trans_std", "ind_mean", "ind_std"] {
        assert!(header.contains(&col), "{col}");
    }
    assert!(lines[1].starts_with("full,5,"));
    assert!(lines[2].starts_with("no_enhancer,5,"));
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn train_is_reproducible_and_eval_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = gtgib(&["train", "--config", &cfg, "--seed", "3", "--threads", "1", "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["metrics.json", "params.ckpt", "memory.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["config_hash"].as_str().is_some_and(|h| h.len() == 64));
    assert!(manifest["build"].is_string());

    // the saved configuration reparses to the same canonical text
    let saved = std::fs::read_to_string(a.join("config.toml")).unwrap();
    let again = gtgib_core::config::RunConfig::from_toml_str(&saved).unwrap();
    assert_eq!(again.to_toml_string().unwrap(), saved);

    let out = gtgib(&["eval", "--run", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let eval: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("metrics.json")).unwrap()).unwrap();
    let best = metrics["best_epoch"].as_u64().unwrap() as usize;
    let epoch = &metrics["epochs"][best];
    for (k, m) in [("test_trans", "ap_test_trans"), ("test_ind", "ap_test_ind")] {
        assert_eq!(eval[k], epoch[m], "{k}");
    }
}

#[test]
fn synth_and_ingest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let synth = dir.path().join("synth");
    let out = gtgib(&["synth", "--config", &cfg, "--out", synth.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let truth = std::fs::read_to_string(synth.join("truth.csv")).unwrap();
    assert_eq!(truth.lines().count(), 13);

    let ingested = dir.path().join("ingested");
    let out = gtgib(&[
        "ingest", "--input", synth.join("events.csv").to_str().unwrap(), "--out", ingested.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ingested.join("summary.json")).unwrap()).unwrap();
    let events = std::fs::read_to_string(synth.join("events.csv")).unwrap().lines().count() - 1;
    assert_eq!(summary["events"], events);
}
