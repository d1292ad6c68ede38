use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_sphere-aero");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("engine.json");
    let json = r#"{"grid": {"resolution": 25, "domain_min": [0,0,0], "domain_max": [1,1,1]},
                   "acoustics": {"window_length": 32, "hop": 8}}"#;
    std::fs::write(&path, json).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_mms_prints_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mms.csv");
    let stdout = ok(&["verify-mms", "--resolutions", "11,13,15", "--csv", csv.to_str().unwrap()]);
    assert!(stdout.contains("Resolution=15: L2_u="));
    assert!(stdout.contains("Convergence rates: velocity="));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "r,h,L2_u,L2_rho,L2_div,max_div");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].starts_with("slope,"));
}

#[test]
fn headless_log_feeds_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let log = dir.path().join("run.log");
    let diag = dir.path().join("diag.csv");
    let stdout = ok(&[
        "run",
        "--config",
        &config,
        "--headless",
        "--steps",
        "48",
        "--log",
        log.to_str().unwrap(),
        "--diagnostics",
        diag.to_str().unwrap(),
    ]);
    assert!(stdout.contains("steps=48"));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 49);
    let diag = std::fs::read_to_string(&diag).unwrap();
    assert_eq!(diag.lines().count(), 49);
    assert!(diag.lines().next().unwrap().starts_with("step,time,divergence_before"));

    let csv = dir.path().join("windows.csv");
    ok(&["analyze", "--input", log.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,p_prime_abs,peak_freqs_hz,peak_weights");
    // 46 centred derivatives: (46 - 32) / 8 + 1 windows
    assert_eq!(lines.len() - 1, 2);
    assert_eq!(lines[1].split(',').count(), 4);
}

#[test]
fn record_audio_writes_pcm16() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let wav = dir.path().join("out.wav");
    ok(&["record-audio", "--config", &config, "--seconds", "0.25", "--wav", wav.to_str().unwrap()]);
    let reader = hound::WavReader::open(&wav).unwrap();
    let spec = reader.spec();
    assert_eq!((spec.channels, spec.sample_rate, spec.bits_per_sample), (1, 44100, 16));
    assert_eq!(reader.len(), 11025);
}

#[test]
fn bench_reports_breakdown() {
    let stdout = ok(&["bench", "--grid", "25", "--steps", "5"]);
    assert!(stdout.contains("steps_per_second="));
    assert!(stdout.contains("project="));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"snapshot_stride": 0}"#).unwrap();
    let out = run(&["run", "--config", bad.to_str().unwrap(), "--headless", "--steps", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("snapshot_stride"));
    assert!(!run(&["verify-mms", "--resolutions", "13,11"]).status.success());
    assert!(!run(&["analyze", "--input", "/nonexistent/run.log", "--csv", "x.csv"]).status.success());
    assert!(!run(&["run", "--steps", "3"]).status.success());
}
