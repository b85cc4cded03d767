//! TOML experiment configuration.
//!
//! Every section and key is optional; omitted values take the library
//! defaults. Angles carry a `_deg` suffix, quaternions are `[x, y, z, w]`.
//!
//! ```toml
//! seed = 3
//!
//! [imu]                 # simulated sensor
//! sigma_na = 2e-3
//!
//! [measurement]         # simulated detections and filter alike
//! sigma_p = 0.10
//! sigma_theta_deg = 20.0
//!
//! [filter]
//! gate_threshold = 12.5916
//! init_window = 10
//!
//! [filter.imu]          # noise assumed by the filter; gravity follows [imu]
//! sigma_na = 5.0
//!
//! [filter.initial]
//! attitude_deg = 30.0
//!
//! [scenario]
//! anchor = 1
//! outlier_rate = 0.05
//!
//! [[scenario.objects]]
//! id = 1
//! position = [0.0, 0.0, 1.0]
//! yaw_deg = 0.0
//!
//! [trajectory]
//! kind = "circle"
//! duration = 60.0
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{ConfigError, IoError};
use crate::log::read_text;
use crate::propagation::ImuNoiseModel;
use crate::sim::{forward_camera_extrinsics, Occlusion, ScenarioSpec, SimObject, TrajectoryKind, TrajectorySpec, YawMode};
use crate::so3::{Pose, Quat, Vec3};
use crate::state::{FilterConfig, InitialUncertainty, ObjectId};
use crate::update::MeasurementNoise;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    #[serde(default)]
    imu: RawImu,
    #[serde(default)]
    measurement: RawMeasurement,
    #[serde(default)]
    extrinsics: Option<RawPose>,
    #[serde(default)]
    filter: RawFilter,
    #[serde(default)]
    scenario: RawScenario,
    #[serde(default)]
    trajectory: RawTrajectory,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImu {
    sigma_na: Option<f64>,
    sigma_nw: Option<f64>,
    sigma_ba: Option<f64>,
    sigma_bw: Option<f64>,
    gravity: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    sigma_p: Option<f64>,
    sigma_theta_deg: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    position: [f64; 3],
    rotation: [f64; 4],
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFilter {
    gate_threshold: Option<f64>,
    init_window: Option<usize>,
    imu: Option<RawImu>,
    #[serde(default)]
    initial: RawInitial,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    position: Option<f64>,
    velocity: Option<f64>,
    attitude_deg: Option<f64>,
    gyro_bias: Option<f64>,
    accel_bias: Option<f64>,
    extrinsic_position: Option<f64>,
    extrinsic_attitude_deg: Option<f64>,
    object_position: Option<f64>,
    object_attitude_deg: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    anchor: Option<u32>,
    imu_rate: Option<f64>,
    cam_rate: Option<f64>,
    initial_gyro_bias: Option<[f64; 3]>,
    initial_accel_bias: Option<[f64; 3]>,
    outlier_rate: Option<f64>,
    outlier_translation: Option<f64>,
    outlier_rotation_deg: Option<f64>,
    fov_half_angle_deg: Option<f64>,
    max_range: Option<f64>,
    objects: Option<Vec<RawObject>>,
    #[serde(default)]
    occlusions: Vec<RawOcclusion>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    id: u32,
    position: [f64; 3],
    yaw_deg: Option<f64>,
    rotation: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOcclusion {
    object: u32,
    start: f64,
    end: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectory {
    kind: Option<String>,
    center: Option<[f64; 3]>,
    radius: Option<f64>,
    scale: Option<f64>,
    angular_rate: Option<f64>,
    /// Fixed yaw; absent means the body faces the center.
    yaw_deg: Option<f64>,
    duration: Option<f64>,
    vertical_amplitude: Option<f64>,
    tilt_amplitude_deg: Option<f64>,
    waypoints: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    log: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    objects: Option<PathBuf>,
    estimate: Option<PathBuf>,
    report: Option<PathBuf>,
}

/// File names written inside an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub log: PathBuf,
    pub ground_truth: PathBuf,
    pub objects: PathBuf,
    pub estimate: PathBuf,
    pub report: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            log: "measurements.log".into(),
            ground_truth: "groundtruth.tum".into(),
            objects: "objects_groundtruth.txt".into(),
            estimate: "estimate.tum".into(),
            report: "report.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub filter: FilterConfig,
    pub scenario: ScenarioSpec,
    pub trajectory: TrajectorySpec,
    pub output: OutputPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenario = ScenarioSpec::default();
        let filter = FilterConfig {
            meas_noise: scenario.meas_noise,
            ..FilterConfig::new(scenario.object_ids(), scenario.anchor_id, scenario.extrinsics)
        };
        Self {
            seed: scenario.seed,
            filter,
            scenario,
            trajectory: TrajectorySpec::default(),
            output: OutputPaths::default(),
        }
    }
}

fn quat_xyzw(c: [f64; 4], name: &'static str) -> Result<Quat, ConfigError> {
    let q = nalgebra::Quaternion::new(c[3], c[0], c[1], c[2]);
    if !(q.norm() > 1e-9) || !q.coords.iter().all(|x| x.is_finite()) {
        return Err(ConfigError::Invalid {
            name,
            reason: "quaternion must be finite and non-zero".into(),
        });
    }
    Ok(Quat::new_normalize(q))
}

fn parse_kind(s: &str) -> Result<TrajectoryKind, ConfigError> {
    match s {
        "circle" => Ok(TrajectoryKind::Circle),
        "lemniscate" => Ok(TrajectoryKind::Lemniscate),
        "waypoint_spline" => Ok(TrajectoryKind::WaypointSpline),
        other => Err(ConfigError::Invalid {
            name: "trajectory.kind",
            reason: format!("unknown kind `{other}` (circle, lemniscate, waypoint_spline)"),
        }),
    }
}

impl RawImu {
    fn build(&self, d: &ImuNoiseModel) -> ImuNoiseModel {
        ImuNoiseModel {
            sigma_na: self.sigma_na.unwrap_or(d.sigma_na),
            sigma_nw: self.sigma_nw.unwrap_or(d.sigma_nw),
            sigma_ba: self.sigma_ba.unwrap_or(d.sigma_ba),
            sigma_bw: self.sigma_bw.unwrap_or(d.sigma_bw),
            gravity: self.gravity.map(Vec3::from).unwrap_or(d.gravity),
        }
    }
}

impl RawConfig {
    fn build(self) -> Result<ExperimentConfig, ConfigError> {
        let d = ExperimentConfig::default();
        let imu = self.imu.build(&d.scenario.imu_noise);
        let filter_defaults = ImuNoiseModel {
            gravity: imu.gravity,
            ..d.filter.imu_noise
        };
        let filter_imu = self.filter.imu.unwrap_or_default().build(&filter_defaults);
        let dm = d.scenario.meas_noise;
        let meas = MeasurementNoise {
            sigma_p: self.measurement.sigma_p.unwrap_or(dm.sigma_p),
            sigma_theta: self
                .measurement
                .sigma_theta_deg
                .map(f64::to_radians)
                .unwrap_or(dm.sigma_theta),
        };
        let extrinsics = match self.extrinsics {
            Some(p) => Pose::new(Vec3::from(p.position), quat_xyzw(p.rotation, "extrinsics.rotation")?),
            None => forward_camera_extrinsics(),
        };

        let s = self.scenario;
        let ds = &d.scenario;
        let objects = match s.objects {
            Some(list) => list
                .into_iter()
                .map(|o| {
                    let q = match (o.rotation, o.yaw_deg) {
                        (Some(_), Some(_)) => {
                            return Err(ConfigError::Invalid {
                                name: "scenario.objects",
                                reason: format!("object {} sets both `rotation` and `yaw_deg`", o.id),
                            })
                        }
                        (Some(r), None) => quat_xyzw(r, "scenario.objects.rotation")?,
                        (None, y) => Quat::from_euler_angles(0.0, 0.0, y.unwrap_or(0.0).to_radians()),
                    };
                    Ok(SimObject {
                        id: ObjectId(o.id),
                        pose: Pose::new(Vec3::from(o.position), q),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => ds.objects.clone(),
        };
        let anchor_id = s.anchor.map(ObjectId).unwrap_or(ds.anchor_id);
        let seed = self.seed.unwrap_or(d.seed);
        let scenario = ScenarioSpec {
            objects,
            anchor_id,
            imu_rate: s.imu_rate.unwrap_or(ds.imu_rate),
            cam_rate: s.cam_rate.unwrap_or(ds.cam_rate),
            imu_noise: imu,
            meas_noise: meas,
            extrinsics,
            initial_gyro_bias: s.initial_gyro_bias.map(Vec3::from).unwrap_or(ds.initial_gyro_bias),
            initial_accel_bias: s.initial_accel_bias.map(Vec3::from).unwrap_or(ds.initial_accel_bias),
            outlier_rate: s.outlier_rate.unwrap_or(ds.outlier_rate),
            outlier_translation: s.outlier_translation.unwrap_or(ds.outlier_translation),
            outlier_rotation: s.outlier_rotation_deg.map(f64::to_radians).unwrap_or(ds.outlier_rotation),
            fov_half_angle: s.fov_half_angle_deg.map(f64::to_radians).unwrap_or(ds.fov_half_angle),
            max_range: s.max_range.unwrap_or(ds.max_range),
            occlusions: s
                .occlusions
                .into_iter()
                .map(|o| Occlusion {
                    object_id: ObjectId(o.object),
                    start: o.start,
                    end: o.end,
                })
                .collect(),
            seed,
        };

        let di = InitialUncertainty::default();
        let ri = self.filter.initial;
        let initial = InitialUncertainty {
            position: ri.position.unwrap_or(di.position),
            velocity: ri.velocity.unwrap_or(di.velocity),
            attitude: ri.attitude_deg.map(f64::to_radians).unwrap_or(di.attitude),
            gyro_bias: ri.gyro_bias.unwrap_or(di.gyro_bias),
            accel_bias: ri.accel_bias.unwrap_or(di.accel_bias),
            extrinsic_position: ri.extrinsic_position.unwrap_or(di.extrinsic_position),
            extrinsic_attitude: ri.extrinsic_attitude_deg.map(f64::to_radians).unwrap_or(di.extrinsic_attitude),
            object_position: ri.object_position.unwrap_or(di.object_position),
            object_attitude: ri.object_attitude_deg.map(f64::to_radians).unwrap_or(di.object_attitude),
        };
        let filter = FilterConfig {
            object_ids: scenario.object_ids(),
            anchor_id,
            extrinsics,
            initial,
            imu_noise: filter_imu,
            meas_noise: meas,
            gate_threshold: self.filter.gate_threshold.unwrap_or(d.filter.gate_threshold),
            init_window: self.filter.init_window.unwrap_or(d.filter.init_window),
        };

        let t = self.trajectory;
        let dt = &d.trajectory;
        let trajectory = TrajectorySpec {
            kind: t.kind.as_deref().map(parse_kind).transpose()?.unwrap_or(dt.kind),
            center: t.center.map(Vec3::from).unwrap_or(dt.center),
            radius: t.radius.unwrap_or(dt.radius),
            scale: t.scale.unwrap_or(dt.scale),
            angular_rate: t.angular_rate.unwrap_or(dt.angular_rate),
            yaw_mode: t.yaw_deg.map(|y| YawMode::Fixed(y.to_radians())).unwrap_or(dt.yaw_mode),
            duration: t.duration.unwrap_or(dt.duration),
            vertical_amplitude: t.vertical_amplitude.unwrap_or(dt.vertical_amplitude),
            tilt_amplitude: t.tilt_amplitude_deg.map(f64::to_radians).unwrap_or(dt.tilt_amplitude),
            waypoints: t
                .waypoints
                .map(|w| w.into_iter().map(Vec3::from).collect())
                .unwrap_or_else(|| dt.waypoints.clone()),
        };

        let o = self.output;
        let od = d.output;
        let output = OutputPaths {
            log: o.log.unwrap_or(od.log),
            ground_truth: o.ground_truth.unwrap_or(od.ground_truth),
            objects: o.objects.unwrap_or(od.objects),
            estimate: o.estimate.unwrap_or(od.estimate),
            report: o.report.unwrap_or(od.report),
        };

        let cfg = ExperimentConfig {
            seed,
            filter,
            scenario,
            trajectory,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        self.trajectory.validate()?;
        self.filter.validate()?;
        if self.filter.anchor_id != self.scenario.anchor_id {
            return Err(ConfigError::Invalid {
                name: "scenario.anchor",
                reason: format!(
                    "filter anchor {} differs from scenario anchor {}",
                    self.filter.anchor_id, self.scenario.anchor_id
                ),
            });
        }
        Ok(())
    }

    /// Parses TOML text; `path` only labels error messages.
    pub fn parse(text: &str, path: &str) -> Result<Self, IoError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| IoError::Config {
            path: path.to_string(),
            message: e.to_string().trim_end().to_string(),
        })?;
        raw.build().map_err(|e| IoError::Config {
            path: path.to_string(),
            message: locate(text, &e),
        })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Prefixes a semantic error with the line that sets the offending key, when
/// one can be found.
fn locate(text: &str, err: &ConfigError) -> String {
    let name = match err {
        ConfigError::NonPositive { name, .. }
        | ConfigError::Negative { name, .. }
        | ConfigError::Invalid { name, .. } => Some(*name),
        ConfigError::AnchorNotDeclared(_) => Some("scenario.anchor"),
        ConfigError::DuplicateObject(_) | ConfigError::NoObjects => Some("scenario.objects"),
    };
    let key = name.and_then(|n| n.rsplit('.').next()).unwrap_or_default();
    let hit = text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .map(|rest| rest.trim_start().starts_with('=') || key == "objects" && rest.starts_with(']'))
            .unwrap_or(false)
            || (key == "objects" && l.starts_with("[[scenario.objects]]"))
    });
    match hit {
        Some(i) if !key.is_empty() => format!("line {}: {err}", i + 1),
        _ => err.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = ExperimentConfig::parse("", "mem").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.scenario.object_ids().len(), 3);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
seed = 11
[imu]
sigma_na = 0.0
gravity = [0.0, 0.0, -9.8]
[measurement]
sigma_p = 0.05
sigma_theta_deg = 10.0
[filter]
gate_threshold = 16.8
init_window = 3
[filter.imu]
sigma_nw = 1e-3
[filter.initial]
object_position = 5.0
[scenario]
anchor = 4
outlier_rate = 0.05
[[scenario.objects]]
id = 4
position = [0.0, 0.0, 1.0]
[[scenario.objects]]
id = 5
position = [0.3, 0.0, 1.0]
rotation = [0.0, 0.0, 0.0, 1.0]
[[scenario.occlusions]]
object = 4
start = 6.4
end = 8.8
[trajectory]
kind = "lemniscate"
duration = 10.0
yaw_deg = 30.0
"#;
        let c = ExperimentConfig::parse(text, "mem").unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.scenario.seed, 11);
        assert_eq!(c.filter.anchor_id, ObjectId(4));
        assert_eq!(c.filter.object_ids, vec![ObjectId(4), ObjectId(5)]);
        assert_eq!(c.scenario.imu_noise.sigma_na, 0.0);
        assert_eq!(c.filter.imu_noise.sigma_na, ImuNoiseModel::filter_default().sigma_na);
        assert_eq!(c.filter.imu_noise.sigma_nw, 1e-3);
        assert_eq!(c.filter.imu_noise.gravity, Vec3::new(0.0, 0.0, -9.8));
        assert_eq!(c.filter.init_window, 3);
        assert_eq!(c.filter.meas_noise, c.scenario.meas_noise);
        assert_eq!(c.trajectory.kind, TrajectoryKind::Lemniscate);
        assert_eq!(c.scenario.occlusions.len(), 1);
        assert!((c.filter.gate_threshold - 16.8).abs() < 1e-12);
    }

    #[test]
    fn syntax_error_names_the_line() {
        let err = ExperimentConfig::parse("seed = 1\n[scenario]\nimu_rate = = 3\n", "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.toml"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::parse("[scenario]\nimu_hz = 3.0\n", "cfg.toml").unwrap_err();
        assert!(err.to_string().contains("imu_hz"));
    }

    #[test]
    fn semantic_error_names_the_line() {
        let err = ExperimentConfig::parse("seed = 1\n\n[scenario]\ncam_rate = -30.0\n", "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");
        let err = ExperimentConfig::parse("[scenario]\nanchor = 9\n", "cfg.toml").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
