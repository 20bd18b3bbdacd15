use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn noiseprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noiseprobe"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn show(o: &Output) -> String {
    format!(
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic dataset; returns the path of its run.toml.
fn fixture(dir: &Path) -> PathBuf {
    let o = noiseprobe(&[
        "generate-fixture",
        "--out",
        s(dir),
        "--n-real",
        "30",
        "--n-fake",
        "30",
        "--k-fake",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    dir.join("run.toml")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_fixture_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    for f in [
        "manifest.csv",
        "expected.json",
        "run.toml",
        "images/real_00000.png",
        "images/fake_00029.png",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let expected = json(&dir.path().join("expected.json"));
    assert!(
        expected["expected_similarity_real"].as_f64().unwrap() > expected["expected_similarity_fake"].as_f64().unwrap()
    );
}

#[test]
fn score_then_rescore_uses_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let o = noiseprobe(&["score", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let scores = dir.path().join("out/scores.jsonl");
    let first = std::fs::read(&scores).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 60);
    assert!(dir.path().join("out/config.resolved.toml").is_file());

    let o = noiseprobe(&["score", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0);
    assert!(
        String::from_utf8_lossy(&o.stdout).contains("0 computed, 60 cached"),
        "{}",
        show(&o)
    );
    assert_eq!(std::fs::read(&scores).unwrap(), first);
}

#[test]
fn evaluate_without_and_with_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let out = dir.path().join("out");

    let o = noiseprobe(&["evaluate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let report = json(&out.join("report.json"));
    assert!(report["epsilon_used"].is_null());
    assert!(report["average_accuracy"].is_null());
    assert_eq!(report["n_real"], 30);
    assert!(report["average_auc"].as_f64().unwrap() > 0.7);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("generator,auc,ap,n\n"), "{csv}");
    assert!(csv.lines().last().unwrap().starts_with("average,"));

    let o = noiseprobe(&["calibrate", "--config", s(&cfg), "--tnr", "0.9"]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let cal = json(&out.join("calibration.json"));
    assert_eq!(cal["target_tnr"], 0.9);
    assert!(cal["achieved_tnr"].as_f64().unwrap() >= 0.9);

    let o = noiseprobe(&["evaluate", "--config", s(&cfg), "--tnr", "0.9"]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let report = json(&out.join("report.json"));
    assert_eq!(report["epsilon_used"], cal["epsilon"]);
    assert!(report["average_accuracy"].as_f64().is_some());
}

#[test]
fn experiment_subcommands_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let out = dir.path().join("out");

    let o = noiseprobe(&["sweep-lambda", "--config", s(&cfg), "--levels", "0,0.1,0.2"]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let csv = std::fs::read_to_string(out.join("sweep_lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,0.5,"), "{csv}");

    let o = noiseprobe(&["ablate-noise", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let ap = std::fs::read_to_string(out.join("sweep_noise_ap.csv")).unwrap();
    let rows: Vec<&str> = ap.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["distribution", "laplace", "gamma", "chi_square", "gaussian"]);
    assert!(out.join("sweep_noise_auc.csv").is_file());

    let o = noiseprobe(&["robustness", "--config", s(&cfg), "--kind", "jpeg", "--levels", "90,50"]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let csv = std::fs::read_to_string(out.join("robustness_jpeg_average.csv")).unwrap();
    let levels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(levels, ["none", "90", "50"]);
    assert!(out.join("robustness_jpeg_rff.csv").is_file());
    assert!(out.join("robustness_jpeg.json").is_file());

    let o = noiseprobe(&[
        "landscape",
        "--config",
        s(&cfg),
        "--step",
        "0.1",
        "--extent",
        "0.2",
        "--max-images",
        "4",
    ]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let csv = std::fs::read_to_string(out.join("landscape.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1 + 5);
    assert!(rows.iter().all(|r| r.len() == 1 + 5));
    assert_eq!(rows[3][3], "1", "{csv}");
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let cases: [&[&str]; 5] = [
        &["score"],
        &["score", "--config", s(&cfg), "--lambda", "-1"],
        &[
            "score",
            "--config",
            s(&cfg),
            "--manifest-real",
            "/nonexistent/manifest.csv",
        ],
        &["robustness", "--config", s(&cfg), "--levels", "1,2"],
        &["score", "--no-such-flag"],
    ];
    for args in cases {
        let o = noiseprobe(args);
        assert_eq!(code(&o), 2, "{args:?}\n{}", show(&o));
    }
    assert!(!dir.path().join("out/scores.jsonl").exists());
}

#[test]
fn undecodable_image_exits_1_after_writing_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    std::fs::write(dir.path().join("images/fake_00003.png"), b"not a png").unwrap();
    let o = noiseprobe(&["score", "--config", s(&cfg)]);
    assert_eq!(code(&o), 1, "{}", show(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fake_00003"));
    let text = std::fs::read_to_string(dir.path().join("out/scores.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 59);
}

#[test]
fn sidecar_backbone_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path());
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data");
    let model = dir.path().join("model");
    std::fs::create_dir(&model).unwrap();
    for f in ["tiny_model.onnx", "preprocess.json"] {
        std::fs::copy(data.join(f), model.join(f)).unwrap();
    }
    let o = noiseprobe(&[
        "score",
        "--config",
        s(&cfg),
        "--backbone-config",
        s(&model.join("preprocess.json")),
        "--out",
        s(&dir.path().join("onnx_out")),
    ]);
    assert_eq!(code(&o), 0, "{}", show(&o));
    let resolved = std::fs::read_to_string(dir.path().join("onnx_out/config.resolved.toml")).unwrap();
    assert!(resolved.contains("kind = \"model_file\""), "{resolved}");
    assert!(resolved.contains("embedding_dim = 12"), "{resolved}");
    let text = std::fs::read_to_string(dir.path().join("onnx_out/scores.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 60);
}
