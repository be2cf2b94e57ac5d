use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn seatwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seatwatch")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not a JSON error line: {text}"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

#[test]
fn usage_errors_exit_2_with_json() {
    let out = seatwatch(&["detect", "--tau-p", "lots"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");

    let out = seatwatch(&["detect"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("FRAME"));

    let out = seatwatch(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn render_then_detect_table_and_annotation() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("room.png");
    let out = seatwatch(&["render", p(&png), "--items", "2", "--persons", "1,4", "--grid", "2x2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let ann = dir.path().join("ann.png");
    let out = seatwatch(&["detect", p(&png), "--format", "table", "--annotated", p(&ann)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("suspected occupancy: 2"), "{table}");
    assert!(std::fs::read(&ann).unwrap().starts_with(b"\x89PNG"));

    let out = seatwatch(&["detect", p(&png), "--out-of-service", "2", "--tau-o", "0.9"]);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["seats"][1]["state"], "out_of_service");
    assert_eq!(doc["classifier_invocations"], 1);
}

#[test]
fn detect_without_scene_or_layout_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("plain.png");
    let out = seatwatch(&["preprocess", p(&dir.path().join("none.png")), p(&png)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!png.exists());

    let raw = dir.path().join("raw.png");
    let out = seatwatch(&["render", p(&raw), "--persons", "1"]);
    assert!(out.status.success());
    let text = std::fs::read(&raw).unwrap();
    // Strip the embedded scene by re-encoding through preprocess.
    let out = seatwatch(&["preprocess", p(&raw), p(&png)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let exposure: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(exposure["output"]["mean_v"].as_f64().is_some());
    assert_ne!(std::fs::read(&png).unwrap(), text);

    let out = seatwatch(&["detect", p(&png)]);
    assert_eq!(out.status.code(), Some(2));
    let out = seatwatch(&["detect", p(&png), "--grid", "4x4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("scene"));

    let scene = dir.path().join("scene.json");
    let out = seatwatch(&["render", p(&raw), "--persons", "1", "--scene-out", p(&scene)]);
    assert!(out.status.success());
    let out = seatwatch(&["detect", p(&png), "--scene", p(&scene)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_runs_leave_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("room.png");
    assert!(seatwatch(&["render", p(&png), "--items", "3"]).status.success());
    let report = dir.path().join("report.json");
    let ann = dir.path().join("missing-dir/ann.png");
    let out = seatwatch(&["detect", p(&png), "--out", p(&report), "--annotated", p(&ann)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "io");
    assert!(!report.exists());

    let garbage = dir.path().join("garbage.png");
    std::fs::write(&garbage, b"\x89PNG\r\n\x1a\nnope").unwrap();
    let out = seatwatch(&["detect", p(&garbage), "--grid", "2x2", "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "decode");
    assert!(!report.exists());
}

#[test]
fn gen_dataset_validates_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("ds");
    let out = seatwatch(&["gen-dataset", p(&out_dir), "--n", "10", "--train-ratio", "0.99"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
    let out = seatwatch(&["gen-dataset", p(&out_dir), "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = seatwatch(&["gen-dataset", p(&out_dir), "--n", "3", "--width", "8"]);
    assert_eq!(out.status.code(), Some(2));

    let out = seatwatch(&["gen-dataset", p(&out_dir), "--n", "6", "--seed", "2", "--train-ratio", "0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = seatwatch(&["gen-dataset", p(&out_dir), "--n", "6"]);
    assert_eq!(out.status.code(), Some(2), "non-empty directory");

    let out = seatwatch(&["evaluate", p(&out_dir), "--test-split", "--format", "table"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("frames"), "{table}");
    let out = seatwatch(&["evaluate", p(&out_dir)]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["frames"], 6);
    assert_eq!(report["state_agreement"], 1.0);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let cfg = dir.path().join("seatwatch.toml");
    std::fs::write(&cfg, "[gen_dataset]\nn = 4\nseed = 8\n\n[evaluate]\nformat = \"table\"\nflip_prob = 1.0\n").unwrap();
    let out = seatwatch(&["--config", p(&cfg), "gen-dataset", p(&ds)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(ds.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["params"]["seed"], 8);

    let out = seatwatch(&["--config", p(&cfg), "evaluate", p(&ds), "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["classifier"]["accuracy"], 0.0, "every label flipped: {report}");

    std::fs::write(&cfg, "[evaluate]\nformat = 7\n").unwrap();
    let out = seatwatch(&["--config", p(&cfg), "evaluate", p(&ds)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn model_backend_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("room.png");
    assert!(seatwatch(&["render", p(&png), "--grid", "2x2"]).status.success());
    let det = fixture("tiny_detector.onnx");
    let cls = fixture("tiny_classifier.onnx");
    let out = seatwatch(&[
        "detect", p(&png), "--grid", "2x2", "--backend", "model",
        "--detector-model", p(&det), "--classifier-model", p(&cls),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["seats"][0]["state"], "occupied_by_person");
    assert_eq!(doc["classifier_invocations"], 3);

    let out = seatwatch(&[
        "detect", p(&png), "--grid", "2x2", "--backend", "model",
        "--detector-model", p(&dir.path().join("absent.onnx")), "--classifier-model", p(&cls),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "model_not_found");
}
