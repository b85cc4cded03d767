//! The simulate → fuse → eval steps as library calls writing into a directory.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{ConfigError, IoError, PipelineError};
use crate::eval::{evaluate, Evaluation, Trajectory};
use crate::filter::Filter;
use crate::log::{fmt_sig9, read_tum, reports_to_jsonl, write_atomic, write_tum, MeasurementLog};
use crate::sim::{generate, replay_log, ReplayOutput, SimulationOutput};
use crate::state::FilterConfig;
use crate::update::{SkipReason, UpdateReport};

/// Default association window for `eval`, s.
pub const DEFAULT_MAX_DT: f64 = 0.02;

fn ensure_dir(dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
        path: dir.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOutput {
    pub sim: SimulationOutput,
    pub log_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub objects_path: PathBuf,
}

/// Runs the simulator and writes the log, the IMU ground truth (TUM) and the
/// object poses `T_WO` (`id tx ty tz qx qy qz qw`).
pub fn simulate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SimulateOutput, PipelineError> {
    let sim = generate(&cfg.scenario, &cfg.trajectory)?;
    ensure_dir(out_dir)?;
    let log_path = out_dir.join(&cfg.output.log);
    let ground_truth_path = out_dir.join(&cfg.output.ground_truth);
    let objects_path = out_dir.join(&cfg.output.objects);
    sim.to_log().write(&log_path)?;
    write_tum(&ground_truth_path, &sim.ground_truth)?;
    let mut objects = String::from("# id tx ty tz qx qy qz qw (object pose in the world)\n");
    for o in &sim.truth_objects {
        let q = o.pose.q;
        let vals = [o.pose.p.x, o.pose.p.y, o.pose.p.z, q.i, q.j, q.k, q.w];
        let fields: Vec<String> = vals.iter().map(|v| fmt_sig9(*v)).collect();
        objects.push_str(&format!("{} {}\n", o.id, fields.join(" ")));
    }
    write_atomic(&objects_path, objects.as_bytes())?;
    Ok(SimulateOutput {
        sim,
        log_path,
        ground_truth_path,
        objects_path,
    })
}

/// Per-run counts over all frame reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FuseSummary {
    pub frames: usize,
    pub applied: usize,
    pub skipped_anchor_absent: usize,
    pub skipped_all_rejected: usize,
    pub accepted_detections: usize,
    pub rejected_detections: usize,
}

impl FuseSummary {
    pub fn from_reports(reports: &[UpdateReport]) -> Self {
        let mut s = FuseSummary {
            frames: reports.len(),
            ..Default::default()
        };
        for r in reports {
            s.applied += r.applied as usize;
            match r.skip_reason {
                Some(SkipReason::AnchorNotVisible) => s.skipped_anchor_absent += 1,
                Some(SkipReason::AllRejected) => s.skipped_all_rejected += 1,
                _ => {}
            }
            s.accepted_detections += r.accepted();
            s.rejected_detections += r.rejected();
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FuseOutput {
    pub replay: ReplayOutput,
    pub summary: FuseSummary,
    pub estimate_path: PathBuf,
    pub report_path: PathBuf,
}

/// Filter configuration for a log: objects and anchor come from the log
/// header, everything else from `cfg`.
pub fn filter_config_for(log: &MeasurementLog, cfg: &ExperimentConfig) -> Result<FilterConfig, ConfigError> {
    if cfg.filter.anchor_id != log.header.anchor_id {
        return Err(ConfigError::Invalid {
            name: "scenario.anchor",
            reason: format!(
                "config anchor {} differs from log anchor {}",
                cfg.filter.anchor_id, log.header.anchor_id
            ),
        });
    }
    let fc = FilterConfig {
        object_ids: log.header.object_ids.clone(),
        anchor_id: log.header.anchor_id,
        ..cfg.filter.clone()
    };
    fc.validate()?;
    Ok(fc)
}

/// Runs the filter over a parsed log. Uses the log's initial state if it has one.
pub fn fuse_log(log: &MeasurementLog, cfg: &ExperimentConfig) -> Result<ReplayOutput, PipelineError> {
    let fc = filter_config_for(log, cfg)?;
    let mut filter = match log.initial {
        Some((t, core)) => Filter::with_initial_state(fc, core, t)?,
        None => Filter::new(fc)?,
    };
    Ok(replay_log(log, &mut filter)?)
}

/// Reads a log, runs the filter and writes the estimate (TUM) and the
/// per-frame reports (JSON lines).
pub fn fuse(log_path: &Path, cfg: &ExperimentConfig, out_dir: &Path) -> Result<FuseOutput, PipelineError> {
    let log = MeasurementLog::read(log_path)?;
    let replay = fuse_log(&log, cfg)?;
    ensure_dir(out_dir)?;
    let estimate_path = out_dir.join(&cfg.output.estimate);
    let report_path = out_dir.join(&cfg.output.report);
    write_tum(&estimate_path, &replay.trajectory)?;
    write_atomic(&report_path, reports_to_jsonl(&replay.reports).as_bytes())?;
    Ok(FuseOutput {
        summary: FuseSummary::from_reports(&replay.reports),
        replay,
        estimate_path,
        report_path,
    })
}

/// Machine-readable evaluation record.
pub fn evaluation_json(e: &Evaluation, with_scale: bool) -> serde_json::Value {
    let q = e.alignment.rotation;
    json!({
        "pos_rmse_m": e.rmse.pos_rmse,
        "euler_rmse_deg": e.rmse.euler_rmse_deg,
        "euler_convention": "z-y-x; reported as roll, pitch, yaw",
        "n_samples": e.rmse.n_samples,
        "alignment": {
            "kind": if with_scale { "sim3" } else { "se3" },
            "rotation_xyzw": [q.i, q.j, q.k, q.w],
            "translation": [e.alignment.translation.x, e.alignment.translation.y, e.alignment.translation.z],
            "scale": e.alignment.scale,
        }
    })
}

pub fn eval_trajectories(
    est: &Trajectory,
    gt: &Trajectory,
    with_scale: bool,
    max_dt: f64,
) -> Result<Evaluation, PipelineError> {
    Ok(evaluate(est, gt, max_dt, with_scale)?)
}

/// Reads two TUM files and evaluates the first against the second. Writes
/// the JSON record to `out` if given.
pub fn eval_files(
    est_path: &Path,
    gt_path: &Path,
    with_scale: bool,
    max_dt: f64,
    out: Option<&Path>,
) -> Result<Evaluation, PipelineError> {
    let est = read_tum(est_path)?;
    let gt = read_tum(gt_path)?;
    let e = eval_trajectories(&est, &gt, with_scale, max_dt)?;
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            ensure_dir(dir)?;
        }
        let text = serde_json::to_string_pretty(&evaluation_json(&e, with_scale)).expect("json") + "\n";
        write_atomic(path, text.as_bytes())?;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config() -> ExperimentConfig {
        ExperimentConfig::parse("seed = 4\n[trajectory]\nduration = 3.0\n", "mem").unwrap()
    }

    #[test]
    fn simulate_fuse_eval_in_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = short_config();
        let s = simulate(&cfg, dir.path()).unwrap();
        assert_eq!(s.sim.imu_stream.len(), 600);
        let f = fuse(&s.log_path, &cfg, dir.path()).unwrap();
        assert_eq!(f.summary.frames, 90);
        let out = dir.path().join("eval.json");
        let e = eval_files(&f.estimate_path, &s.ground_truth_path, false, DEFAULT_MAX_DT, Some(&out)).unwrap();
        assert!(e.rmse.n_samples > 500);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        assert_eq!(v["n_samples"], e.rmse.n_samples);
    }

    #[test]
    fn anchor_mismatch_is_config_error() {
        let cfg = short_config();
        let mut log = generate(&cfg.scenario, &cfg.trajectory).unwrap().to_log();
        log.header.anchor_id = crate::state::ObjectId(2);
        let err = fuse_log(&log, &cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
