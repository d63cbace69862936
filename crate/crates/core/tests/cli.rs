mod common;

use std::path::Path;
use std::process::{Command, Output};

fn gatenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gatenet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, data: &Path) -> String {
    let path = dir.join("config.json");
    let json = serde_json::json!({
        "data_dir": data,
        "epochs_base": 1,
        "epochs_gates": 1,
        "seed": 3,
    });
    std::fs::write(&path, json.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_data_reports_truncated_file() {
    let dir = tempfile::tempdir().unwrap();
    for name in gatenet::data::TRAIN_FILES
        .iter()
        .chain([&gatenet::data::TEST_FILE])
    {
        let len = if *name == "data_batch_3.bin" {
            1000
        } else {
            30_730_000
        };
        std::fs::write(dir.path().join(name), vec![0u8; len]).unwrap();
    }
    let o = gatenet(&["verify-data", "--data-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("data_batch_3.bin"), "{err}");
    assert!(err.contains("30730000"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
}

#[test]
fn verify_data_accepts_synthetic_set() {
    let data = common::synthetic_dir();
    let o = gatenet(&["verify-data", "--data-dir", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(gatenet(&["launch"]).status.code(), Some(2));
    assert_eq!(
        gatenet(&["train-base", "--epochs", "3"]).status.code(),
        Some(2)
    );
    assert_eq!(
        gatenet(&["train-gates", "--base", "x.gnc"]).status.code(),
        Some(2)
    );
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"learning_rate": 0.01}"#).unwrap();
    let o = gatenet(&["train-base", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn gradcheck_command_passes() {
    let o = gatenet(&["gradcheck"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    for kind in ["dense_weight", "gate_bias", "relu", "log_softmax", "nll"] {
        assert!(out.contains(kind), "{out}");
    }
}

#[test]
fn full_pipeline_through_the_binary() {
    let data = common::synthetic_dir();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, &data);
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();

    let o = gatenet(&["train-base", "--config", &cfg, "--out", &p("base.gnc")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("base.loss_curve.csv").exists());
    for cat in ["vehicles", "animals"] {
        let out = p(&format!("gates_{cat}.gnc"));
        let o = gatenet(&[
            "train-gates",
            "--base",
            &p("base.gnc"),
            "--category",
            cat,
            "--out",
            &out,
            "--config",
            &cfg,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }

    let o = gatenet(&[
        "eval",
        "--base",
        &p("base.gnc"),
        "--gates",
        &p("gates_vehicles.gnc"),
        &p("gates_animals.gnc"),
        "--report",
        &p("report"),
        "--config",
        &cfg,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = d.join("report");
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["model"], "gated");
    for key in ["test_loss", "test_accuracy", "categorical_isolation"] {
        assert!(metrics[key].as_f64().unwrap().is_finite());
    }
    assert_eq!(metrics["n_test"], 10_000);
    let expected = [
        "metrics_base.json",
        "metrics_gated.json",
        "confusion_base.csv",
        "confusion_gated.csv",
        "gate_biases_layer1.csv",
        "gate_biases_layer2.csv",
        "gate_raw.csv",
        "loss_curve.csv",
    ];
    for f in expected {
        assert!(report.join(f).exists(), "{f} missing");
    }
    let curve = std::fs::read_to_string(report.join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("step,phase,split,loss\n"));
    for phase in [",base,", ",vehicles,", ",animals,"] {
        assert!(curve.contains(phase), "{phase}");
    }
    let layer1 = std::fs::read_to_string(report.join("gate_biases_layer1.csv")).unwrap();
    assert_eq!(layer1.lines().count(), 257);

    let before: Vec<Vec<u8>> = expected
        .iter()
        .map(|f| std::fs::read(report.join(f)).unwrap())
        .collect();
    for f in expected {
        std::fs::remove_file(report.join(f)).unwrap();
    }
    let o = gatenet(&["export-figures", "--report", &p("report")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let after: Vec<Vec<u8>> = expected
        .iter()
        .map(|f| std::fs::read(report.join(f)).unwrap())
        .collect();
    assert_eq!(before, after);

    let o = gatenet(&[
        "eval",
        "--base",
        &p("base.gnc"),
        "--gates",
        &p("gates_vehicles.gnc"),
        "--report",
        &p("partial"),
        "--config",
        &cfg,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("animals"), "{}", stderr(&o));

    let o = gatenet(&["train-base", "--config", &p("missing.json")]);
    assert_eq!(o.status.code(), Some(1));
    let o = gatenet(&[
        "eval",
        "--base",
        &p("gates_vehicles.gnc"),
        "--report",
        &p("r2"),
        "--config",
        &cfg,
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("base"), "{}", stderr(&o));
}
