use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use objfuse::config::ExperimentConfig;
use objfuse::log::MeasurementLog;
use objfuse::pipeline::{self, DEFAULT_MAX_DT};

fn objfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objfuse"))
        .args(args)
        .output()
        .expect("spawn objfuse")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("experiment.toml");
    fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

const SHORT: &str = "seed = 11\n[trajectory]\nduration = 4.0\n";

#[test]
fn simulate_writes_header_and_imu_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 3\n");
    let out = dir.path().join("run");
    assert_ok(&objfuse(&["simulate", "--config", s(&cfg), "--out", s(&out)]));

    let log = fs::read_to_string(out.join("measurements.log")).unwrap();
    let header = log.lines().next().unwrap();
    assert!(header.starts_with("HEADER "));
    assert!(header.contains("objects=1,2,3"), "{header}");
    assert_eq!(log.lines().filter(|l| l.starts_with("IMU ")).count(), 12000);
}

#[test]
fn simulate_then_fuse_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        assert_ok(&objfuse(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
        let log = out.join("measurements.log");
        assert_ok(&objfuse(&["fuse", "--log", s(&log), "--config", s(&cfg), "--out", s(&out)]));
        runs.push(out);
    }
    for f in [
        "measurements.log",
        "groundtruth.tum",
        "objects_groundtruth.txt",
        "estimate.tum",
        "report.jsonl",
    ] {
        let a = fs::read(runs[0].join(f)).unwrap();
        let b = fs::read(runs[1].join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn eval_of_a_file_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let out = dir.path().join("run");
    assert_ok(&objfuse(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
    let gt = out.join("groundtruth.tum");

    let json = dir.path().join("self.json");
    assert_ok(&objfuse(&["eval", "--est", s(&gt), "--gt", s(&gt), "--out", s(&json)]));
    let e = pipeline::eval_files(&gt, &gt, false, DEFAULT_MAX_DT, None).unwrap();
    assert!(e.rmse.pos_rmse.iter().all(|v| v.abs() < 1e-9), "{:?}", e.rmse.pos_rmse);
    assert!(e.rmse.euler_rmse_deg.iter().all(|v| v.abs() < 1e-6), "{:?}", e.rmse.euler_rmse_deg);
    let rows = fs::read_to_string(&gt).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert!(fs::read_to_string(json).unwrap().contains(&format!("\"n_samples\": {rows}")));
}

#[test]
fn eval_of_disjoint_times_fails_with_evaluation_code() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tum");
    let b = dir.path().join("b.tum");
    fs::write(&a, "0.0 0 0 0 0 0 0 1\n0.1 1 0 0 0 0 0 1\n0.2 2 0 0 0 0 0 1\n").unwrap();
    fs::write(&b, "5.0 0 0 0 0 0 0 1\n5.1 1 0 0 0 0 0 1\n5.2 2 0 0 0 0 0 1\n").unwrap();
    let o = objfuse(&["eval", "--est", s(&a), "--gt", s(&b)]);
    assert_eq!(o.status.code(), Some(6), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!o.stderr.is_empty());
}

#[test]
fn cli_eval_matches_in_process_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 5\n[trajectory]\nduration = 8.0\n[scenario]\noutlier_rate = 0.05\n");
    let out = dir.path().join("run");
    assert_ok(&objfuse(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
    let log = out.join("measurements.log");
    assert_ok(&objfuse(&["fuse", "--log", s(&log), "--config", s(&cfg), "--out", s(&out)]));

    let est = out.join("estimate.tum");
    let gt = out.join("groundtruth.tum");
    for scale in [false, true] {
        let cli_json = dir.path().join(format!("cli_{scale}.json"));
        let mut args = vec!["eval", "--est", s(&est), "--gt", s(&gt), "--out", s(&cli_json)];
        if scale {
            args.push("--with-scale");
        }
        assert_ok(&objfuse(&args));

        // In-process: simulate, fuse and evaluate without touching the CLI.
        let c = ExperimentConfig::load(&cfg).unwrap();
        let mem = dir.path().join(format!("mem_{scale}"));
        let sim = pipeline::simulate(&c, &mem).unwrap();
        let fused = pipeline::fuse(&sim.log_path, &c, &mem).unwrap();
        let lib_json = dir.path().join(format!("lib_{scale}.json"));
        pipeline::eval_files(&fused.estimate_path, &sim.ground_truth_path, scale, DEFAULT_MAX_DT, Some(&lib_json))
            .unwrap();
        assert_eq!(fs::read(&cli_json).unwrap(), fs::read(&lib_json).unwrap());
    }
}

#[test]
fn log_without_the_anchor_is_dead_reckoned() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let out = dir.path().join("run");
    assert_ok(&objfuse(&["simulate", "--config", s(&cfg), "--out", s(&out)]));

    let mut log = MeasurementLog::read(&out.join("measurements.log")).unwrap();
    let anchor = log.header.anchor_id;
    for f in &mut log.frames {
        f.detections.retain(|d| d.object_id != anchor);
    }
    let frames = log.frames.len();
    let stripped = dir.path().join("no_anchor.log");
    log.write(&stripped).unwrap();

    let fused = dir.path().join("fused");
    let o = objfuse(&["fuse", "--log", s(&stripped), "--config", s(&cfg), "--out", s(&fused)]);
    assert_ok(&o);
    let expected = format!("applied 0, skipped {frames} (anchor not visible {frames}, all rejected 0)");
    assert!(stdout(&o).contains(&expected), "{}", stdout(&o));
    let reports = fs::read_to_string(fused.join("report.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), frames);
    assert!(reports.lines().all(|l| l.contains("\"skip_reason\":\"anchor_not_visible\"")));
}

#[test]
fn bad_config_exits_with_config_code_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[scenario]\noutlier_rate = \"lots\"\n");
    let o = objfuse(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_input_and_usage_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tum");
    let o = objfuse(&["eval", "--est", s(&missing), "--gt", s(&missing)]);
    assert_eq!(o.status.code(), Some(5));
    assert_eq!(objfuse(&["fuse", "--log", "x"]).status.code(), Some(2));
}

#[test]
fn anchor_mismatch_between_config_and_log_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHORT);
    let out = dir.path().join("run");
    assert_ok(&objfuse(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
    let other = dir.path().join("other.toml");
    fs::write(&other, format!("{SHORT}[scenario]\nanchor = 2\n")).unwrap();
    let log = out.join("measurements.log");
    let o = objfuse(&["fuse", "--log", s(&log), "--config", s(&other), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
}
