use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_layout-fusion")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_dataset_exits_1_and_names_path() {
    let out = bin(&["run", "--dataset", "missing/"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing/"));
}

#[test]
fn bad_config_exits_1_and_names_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = \"seven\"\n").unwrap();
    let out = bin(&["run", "--sim", "square", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn usage_error_exits_1() {
    assert_eq!(bin(&["run", "--sim", "square", "--dataset", "x"]).status.code(), Some(1));
    assert_eq!(bin(&["run"]).status.code(), Some(1));
}

#[test]
fn too_few_frames_is_recoverable_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["run", "--sim", "square", "--frames", "2", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn print_config_round_trips() {
    let out = bin(&["run", "--print-config", "--seed", "11"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = layout_fusion::config::PipelineConfig::from_toml(&text).unwrap();
    assert_eq!(cfg.seed, 11);
}

#[test]
fn simulated_dataset_runs_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out_dir = dir.path().join("out");
    let sim = bin(&["simulate", "--world", "square", "--frames", "30", "--out", s(&data)]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    for f in ["meta.json", "frames.jsonl", "gt.json"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let run = bin(&["run", "--dataset", s(&data), "--out", s(&out_dir)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["trajectory.json", "floorplan.json", "floorplan.svg", "metrics.json", "telemetry.jsonl", "config.toml"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    assert!(std::fs::read_dir(out_dir.join("labels")).unwrap().count() > 0);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["fscore"].as_f64().unwrap() >= 0.95);
}
