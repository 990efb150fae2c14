//! End-to-end runs of the `crowdmem` binary: exit codes, error reporting,
//! and the file-based workflow from simulation through evaluation.

use std::path::Path;
use std::process::Output;

fn run(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_crowdmem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL_CONFIG: &str = r#"{
  "version": 1,
  "synth": {
    "n_train": 60,
    "n_val": 20,
    "n_test": 40,
    "feature_dim": 3,
    "class_separation": 4.0,
    "class_ratio": 0.5,
    "workers": [
      {"kind": "skilled", "flip_probability": 0.1},
      {"kind": "skilled", "flip_probability": 0.1},
      {"kind": "skilled", "flip_probability": 0.2},
      {"kind": "random"}
    ],
    "seed": 9
  },
  "train": {
    "epochs": 3,
    "groups_per_epoch": 30,
    "batch_groups": 10,
    "memory_k": 4,
    "encoder": {"hidden_dim": 8, "embedding_dim": 4, "learning_rate": 1.0},
    "seed": 1
  },
  "seeds": [1]
}"#;

#[test]
fn full_pipeline_over_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let sim_dir = dir.path().join("data");

    let out = run(&["simulate", "--config", &config, "--out", sim_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["annotations.csv", "features.csv", "partition.csv", "manifest.json"] {
        assert!(sim_dir.join(name).exists(), "missing {name}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sim_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert!(manifest["kappa"].is_number());
    assert_eq!(manifest["workers"].as_array().unwrap().len(), 4);

    // retarget the config at the written files and run the whole pipeline
    let file_config = format!(
        r#"{{
  "version": 1,
  "dataset": {{
    "annotations": "{sim}/annotations.csv",
    "features": "{sim}/features.csv",
    "partition": "{sim}/partition.csv"
  }},
  "train": {{
    "epochs": 3,
    "groups_per_epoch": 30,
    "batch_groups": 10,
    "memory_k": 4,
    "encoder": {{"hidden_dim": 8, "embedding_dim": 4, "learning_rate": 1.0}},
    "seed": 1
  }},
  "seeds": [1, 2]
}}"#,
        sim = sim_dir.to_str().unwrap()
    );
    let config2_path = dir.path().join("config_files.json");
    std::fs::write(&config2_path, file_config).unwrap();
    let config2 = config2_path.to_str().unwrap();

    let train_dir = dir.path().join("run");
    let out = run(&["train", "--config", config2, "--out", train_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "checkpoint.txt",
        "history.jsonl",
        "embeddings.csv",
        "confidence_per_worker.csv",
        "confidence_aggregated.csv",
    ] {
        assert!(train_dir.join(name).exists(), "missing {name}");
    }
    let history = std::fs::read_to_string(train_dir.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    for field in ["epoch", "loss", "val_acc_estimated", "mean_confidence", "confidence_refresh"] {
        assert!(first.get(field).is_some(), "history record lacks {field}");
    }

    let eval_dir = dir.path().join("eval");
    let ckpt = train_dir.join("checkpoint.txt");
    let out = run(&[
        "evaluate",
        "--config",
        config2,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    for method in ["crowdmem", "majority_vote", "dawid_skene"] {
        assert_eq!(metrics[method]["accuracy"]["per_seed"].as_array().unwrap().len(), 2);
        assert_eq!(metrics[method]["n_test"], 40);
    }
}

#[test]
fn unknown_config_key_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        r#"{"version": 1, "synth": {"n_train": 10}, "grups_per_epoch": 5}"#,
    );
    let out = run(&["train", "--config", &config]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("grups_per_epoch"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_fails_cleanly() {
    let out = run(&["train", "--config", "/nonexistent/config.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn evaluate_rejects_dangling_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = run(&[
        "evaluate",
        "--config",
        &config,
        "--checkpoint",
        "/nonexistent/checkpoint.txt",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("checkpoint"), "stderr: {stderr}");
}

#[test]
fn sweep_memory_rejects_zero_k() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &SMALL_CONFIG.replace(r#""seeds": [1]"#, r#""seeds": [1], "sweep_k": [0, 3]"#),
    );
    let out = run(&["sweep-memory", "--config", &config]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("memory window"), "stderr: {stderr}");
}

#[test]
fn seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let dir_a = dir.path().join("a");
    let dir_b = dir.path().join("b");
    let out = run(&["simulate", "--config", &config, "--out", dir_a.to_str().unwrap()]);
    assert!(out.status.success());
    let out = run(&[
        "simulate",
        "--config",
        &config,
        "--seed",
        "12345",
        "--out",
        dir_b.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let a = std::fs::read(dir_a.join("annotations.csv")).unwrap();
    let b = std::fs::read(dir_b.join("annotations.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn confidence_report_runs_without_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out_dir = dir.path().join("report");
    let out = run(&[
        "confidence-report",
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("confidence_report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5); // header + 4 workers
    let random_line = csv.lines().find(|l| l.ends_with("true")).unwrap();
    assert!(random_line.starts_with("w03"));
}
