use std::fs;
use std::path::Path;
use std::process::Command;

use aecbse::cli::{self, ExperimentSpec};
use aecbse::metrics;
use aecbse::optimizer::{Algorithm, RunConfig};
use aecbse::scenegen::ScenarioConfig;
use aecbse::stft::FrameSpec;
use aecbse::wav;

fn small_spec(out: &Path) -> ExperimentSpec {
    ExperimentSpec {
        scenario: ScenarioConfig {
            duration_s: 1.0,
            seed: 4,
            ..ScenarioConfig::default()
        },
        frame: FrameSpec {
            frame_len: 512,
            hop: 256,
            ..FrameSpec::default()
        },
        run: RunConfig {
            iterations: 5,
            ..RunConfig::default()
        },
        runs: 2,
        output_dir: out.to_path_buf(),
        ..ExperimentSpec::default()
    }
}

#[test]
fn simulate_writes_deterministic_scene() {
    let dir = tempfile::tempdir().unwrap();
    let a = cli::cmd_simulate(&small_spec(&dir.path().join("a"))).unwrap();
    cli::cmd_simulate(&small_spec(&dir.path().join("b"))).unwrap();
    assert_eq!(a.samples, 16000);
    for name in ["manifest.json", "mixture.wav", "loudspeaker.wav", "soi.wav", "echo.wav"] {
        let x = fs::read(dir.path().join("a").join(name)).unwrap();
        let y = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let (mix, sr) = wav::read_wav(&dir.path().join("a/mixture.wav")).unwrap();
    assert_eq!((mix.len(), mix[0].len(), sr), (4, 16000, 16000));
}

#[test]
fn unprocessed_run_copies_reference_mic() {
    let dir = tempfile::tempdir().unwrap();
    let scene_dir = dir.path().join("scene");
    cli::cmd_simulate(&small_spec(&scene_dir)).unwrap();
    let spec = ExperimentSpec {
        manifest: Some(scene_dir.join("manifest.json")),
        algorithms: vec![Algorithm::Unprocessed],
        ..small_spec(&dir.path().join("run"))
    };
    let report = cli::cmd_run(&spec).unwrap();
    assert_eq!(report.metrics.erle_aec_db, 0.0);
    let (enhanced, _) = wav::read_wav(&dir.path().join("run/enhanced.wav")).unwrap();
    let (mix, _) = wav::read_wav(&scene_dir.join("mixture.wav")).unwrap();
    assert_eq!(enhanced.len(), 1);
    assert_eq!(enhanced[0], mix[0]);
    assert!(dir.path().join("run/filters.json").exists());
    assert!(dir.path().join("run/diagnostics.json").exists());
}

#[test]
fn joint_run_writes_filters() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        algorithms: vec![Algorithm::Joint],
        ..small_spec(dir.path())
    };
    let report = cli::cmd_run(&spec).unwrap();
    assert_eq!(report.iterations.len(), 5);
    let filters: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("filters.json")).unwrap()).unwrap();
    assert_eq!(filters.as_array().unwrap().len(), 257);
}

#[test]
fn single_run_bench_mean_equals_row() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        runs: 1,
        ..small_spec(dir.path())
    };
    let (reports, csv) = cli::cmd_bench(&spec).unwrap();
    assert_eq!(reports.len(), Algorithm::ALL.len());
    for (alg, m) in metrics::means(&reports) {
        let r = reports.iter().find(|r| r.algorithm == alg).unwrap();
        assert_eq!(m, [r.sir_db, r.ser_db, r.sier_db, r.erle_aec_db, r.erle_bf_db]);
    }
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], metrics::CSV_HEADER);
    assert_eq!(lines.len(), 1 + 2 * Algorithm::ALL.len());
    assert_eq!(fs::read_to_string(dir.path().join("bench.csv")).unwrap(), csv);
}

#[test]
fn binary_reports_errors_with_exit_code() {
    let bin = env!("CARGO_BIN_EXE_aecbse");
    let out = Command::new(bin).args(["run", "--config", "/nonexistent/spec.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/spec.json"));

    let out = Command::new(bin).args(["bench", "--algo", "bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = Command::new(bin).arg("--help").output().unwrap();
    assert!(out.status.success());
}

#[test]
fn binary_simulates_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(&dir.path().join("scene"));
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, serde_json::to_string(&spec).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_aecbse"))
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "9"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: cli::Manifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("scene/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.scenario.seed, 9);
}

#[test]
fn partial_spec_fills_defaults() {
    let spec: ExperimentSpec =
        serde_json::from_str(r#"{"scenario": {"seed": 3}, "run": {"iterations": 7}, "frame": {"hop": 512, "frame_len": 1024}}"#)
            .unwrap();
    assert_eq!(spec.scenario.seed, 3);
    assert_eq!(spec.scenario.mics, ScenarioConfig::default().mics);
    assert_eq!(spec.run.iterations, 7);
    assert_eq!(spec.run.reference_channel, 1);
    assert_eq!(spec.frame.sample_rate, 16000);
    spec.validate().unwrap();
}
