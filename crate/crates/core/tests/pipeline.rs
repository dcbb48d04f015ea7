//! End-to-end checks of the command-line binary: artifact round trips,
//! determinism across processes, exit-code contract, and the simulation
//! throughput floor.

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pairsync"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate_into(dir: &Path, extra: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args(["simulate", "--slots", "2000000", "--seed", "7", "--out"])
        .arg(dir)
        .args(extra);
    cmd.output().expect("spawn simulate")
}

/// A short-link configuration bright enough that a 2e6-slot smoke run
/// yields thousands of coincidences and a finite CAR.
fn bright_config() -> pairsync::config::ExperimentConfig {
    use pairsync::source::{MultiPairModel, RateInterpretation};
    let mut cfg = pairsync::config::ExperimentConfig::default_run();
    cfg.source.pair_prob_per_pulse = 0.02;
    cfg.source.rate_interpretation = RateInterpretation::MeanPairs;
    cfg.source.multi_pair_model = MultiPairModel::Poisson;
    cfg.channel_1.loss_db = 2.0;
    cfg.channel_2.loss_db = 4.0;
    cfg.channel_1.raman_rate_per_slot = 1e-3;
    cfg.channel_2.raman_rate_per_slot = 1e-3;
    cfg
}

#[test]
fn simulate_analyze_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let cfg_path = tmp.path().join("bright.cfg");
    std::fs::write(&cfg_path, bright_config().to_flat_string().unwrap()).unwrap();

    let out = simulate_into(&run, &["--config", cfg_path.to_str().unwrap()]);
    assert!(out.status.success(), "simulate failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("slots 2000000  seed 7  sync on"), "{text}");
    assert!(text.contains("CAR"), "{text}");
    for name in [
        "config.cfg",
        "tags_node1.qtag",
        "tags_node2.qtag",
        "histogram.csv",
        "car_report.json",
        "clock_rx1.csv",
        "clock_rx2.csv",
        "clock_diff.csv",
        "run_stats.json",
        "manifest.json",
    ] {
        assert!(run.join(name).is_file(), "missing artifact {name}");
    }

    // Re-analyzing the written tag files reproduces a finite CAR report.
    let out = bin()
        .args(["analyze", "--tags-a"])
        .arg(run.join("tags_node1.qtag"))
        .arg("--tags-b")
        .arg(run.join("tags_node2.qtag"))
        .output()
        .expect("spawn analyze");
    assert!(out.status.success(), "analyze failed: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("report JSON");
    assert!(report["car"].as_f64().unwrap() > 1.0);
    assert_eq!(report["infinite"], serde_json::Value::Bool(false));

    // The report command re-hashes every artifact against the manifest.
    let out = bin().args(["report", "--run"]).arg(&run).output().unwrap();
    assert!(out.status.success(), "report failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("files verified"), "{text}");
}

#[test]
fn cli_runs_are_deterministic_across_processes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(simulate_into(&a, &[]).status.success());
    assert!(simulate_into(&b, &[]).status.success());
    for name in ["tags_node1.qtag", "tags_node2.qtag", "car_report.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs between identical CLI runs");
    }
}

#[test]
fn sync_toggle_changes_background() {
    let tmp = tempfile::tempdir().unwrap();
    let (on, off) = (tmp.path().join("on"), tmp.path().join("off"));
    assert!(simulate_into(&on, &["--sync", "on"]).status.success());
    let out = simulate_into(&off, &["--sync", "off"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("sync off"));

    let stats = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(p.join("run_stats.json")).unwrap()).unwrap()
    };
    let s_on = stats(&on);
    let s_off = stats(&off);
    assert!(s_on["raman_arrivals_1"].as_u64().unwrap() > 0);
    assert_eq!(s_off["raman_arrivals_1"].as_u64().unwrap(), 0);
    assert_eq!(s_off["raman_arrivals_2"].as_u64().unwrap(), 0);
}

#[test]
fn config_errors_exit_with_code_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    std::fs::write(&cfg, "n_slots = banana\n").unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn missing_input_exits_with_code_2() {
    let out = bin()
        .args([
            "analyze",
            "--tags-a",
            "/nonexistent/a.qtag",
            "--tags-b",
            "/nonexistent/b.qtag",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
}

#[test]
fn calibrate_emits_a_loadable_config() {
    let out = bin()
        .args(["calibrate", "--target-car", "42"])
        .output()
        .unwrap();
    assert!(out.status.success(), "calibrate failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("raman_rate_per_slot"), "{text}");
    // Everything after the config header must parse as a flat config.
    let flat = text.split("# full config at the calibrated rate:").nth(1);
    let flat = flat.expect("config section present");
    let cfg = pairsync::config::ExperimentConfig::from_flat_str(flat).expect("parses");
    assert!(cfg.channel_1.raman_rate_per_slot > 0.0);
    assert_eq!(
        cfg.channel_1.raman_rate_per_slot,
        cfg.channel_2.raman_rate_per_slot
    );
}

#[test]
fn pulsechain_writes_waveforms() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("chain");
    let out = bin()
        .args(["pulsechain", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "pulsechain failed: {}", stderr(&out));
    for name in [
        "input.csv",
        "comparator.csv",
        "shaped.csv",
        "amplified.csv",
        "optical.csv",
        "optical_measured.csv",
    ] {
        assert!(dir.join(name).is_file(), "missing waveform {name}");
    }
    let text = stdout(&out);
    assert!(text.contains("raw extinction"), "{text}");
}

/// Closing the read end of a pipe must terminate the binary quietly, the
/// way any stream-friendly Unix tool behaves, never via a write panic.
#[cfg(unix)]
#[test]
fn closed_stdout_pipe_does_not_panic() {
    let script = format!(
        "{} calibrate --target-car 42 | head -c 1 > /dev/null",
        env!("CARGO_BIN_EXE_pairsync")
    );
    let out = Command::new("sh").args(["-c", &script]).output().unwrap();
    assert!(out.status.success(), "pipeline failed: {}", stderr(&out));
    assert!(
        !stderr(&out).contains("panicked"),
        "binary panicked on closed pipe: {}",
        stderr(&out)
    );
}

#[test]
fn shipped_baseline_config_matches_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/baseline.cfg");
    let text = std::fs::read_to_string(path).expect("configs/baseline.cfg");
    let cfg = pairsync::config::ExperimentConfig::from_flat_str(&text).expect("parses");
    assert_eq!(cfg, pairsync::config::ExperimentConfig::default_run());
}

/// The simulator must clear 1e7 slots per second single-threaded; the
/// default configuration runs far above the floor.
#[test]
fn throughput_meets_floor() {
    let mut cfg = pairsync::config::ExperimentConfig::default_run();
    cfg.n_slots = 50_000_000;
    let start = Instant::now();
    pairsync::engine::run_experiment(&cfg).unwrap();
    let rate = cfg.n_slots as f64 / start.elapsed().as_secs_f64();
    assert!(
        rate >= 1e7,
        "throughput {:.2e} slots/s below the 1e7 floor",
        rate
    );
}
