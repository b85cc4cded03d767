//! Synthetic IMU and object-pose sensor streams.
//!
//! Stands in for the camera + learned pose estimator: detections are the true
//! camera-object poses with Gaussian noise, optional gross outliers and a
//! cone-plus-range visibility model.

mod replay;
mod trajectory;

pub use replay::{replay, replay_log, ObjectSnapshot, ReplayOutput};
pub use trajectory::{KinematicSample, TrajectoryKind, TrajectorySpec, YawMode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ConfigError, SimError};
use crate::eval::Trajectory;
use crate::log::{LogHeader, MeasurementLog};
use crate::propagation::{ImuNoiseModel, ImuSample};
use crate::so3::{small_angle_quat, Pose, Vec3};
use crate::state::{CoreState, ObjectId};
use crate::update::{FrameMeasurement, MeasurementNoise, ObjectPoseMeasurement};

/// A window during which an object is hidden from the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occlusion {
    pub object_id: ObjectId,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimObject {
    pub id: ObjectId,
    /// Ground-truth object pose in the world, `T_WO`.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub objects: Vec<SimObject>,
    pub anchor_id: ObjectId,
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub imu_noise: ImuNoiseModel,
    pub meas_noise: MeasurementNoise,
    /// True IMU-camera extrinsics `T_IC`.
    pub extrinsics: Pose,
    pub initial_gyro_bias: Vec3,
    pub initial_accel_bias: Vec3,
    pub outlier_rate: f64,
    /// Translation offset of a gross outlier, m.
    pub outlier_translation: f64,
    /// Rotation angle of a gross outlier, rad.
    pub outlier_rotation: f64,
    pub fov_half_angle: f64,
    pub max_range: f64,
    pub occlusions: Vec<Occlusion>,
    pub seed: u64,
}

/// Camera looking along the IMU x-axis, image x to the right (-y_I) and
/// image y down (-z_I), offset slightly forward and up.
pub fn forward_camera_extrinsics() -> Pose {
    let r = nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let q = nalgebra::UnitQuaternion::from_matrix(&r);
    Pose::new(Vec3::new(0.05, 0.0, 0.03), q)
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let center = Vec3::new(0.0, 0.0, 1.0);
        let obj = |id: u32, off: Vec3, yaw: f64| SimObject {
            id: ObjectId(id),
            pose: Pose::new(
                center + off,
                crate::so3::Quat::from_euler_angles(0.0, 0.0, yaw),
            ),
        };
        Self {
            objects: vec![
                obj(1, Vec3::new(0.0, 0.0, 0.0), 0.0),
                obj(2, Vec3::new(0.25, 0.2, 0.05), 0.8),
                obj(3, Vec3::new(-0.2, -0.25, -0.05), -1.4),
            ],
            anchor_id: ObjectId(1),
            imu_rate: 200.0,
            cam_rate: 30.0,
            imu_noise: ImuNoiseModel::default(),
            meas_noise: MeasurementNoise::default(),
            extrinsics: forward_camera_extrinsics(),
            initial_gyro_bias: Vec3::zeros(),
            initial_accel_bias: Vec3::zeros(),
            outlier_rate: 0.0,
            outlier_translation: 1.0,
            outlier_rotation: 90f64.to_radians(),
            fov_half_angle: 35f64.to_radians(),
            max_range: 5.0,
            occlusions: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn object_ids(&self) -> Vec<ObjectId> {
        self.objects.iter().map(|o| o.id).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.objects.is_empty() {
            return Err(ConfigError::NoObjects);
        }
        let mut ids = self.object_ids();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::DuplicateObject(w[0]));
        }
        if !ids.contains(&self.anchor_id) {
            return Err(ConfigError::AnchorNotDeclared(self.anchor_id));
        }
        for (name, value) in [
            ("scenario.imu_rate", self.imu_rate),
            ("scenario.cam_rate", self.cam_rate),
            ("scenario.fov_half_angle", self.fov_half_angle),
            ("scenario.max_range", self.max_range),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if !(0.0..1.0).contains(&self.outlier_rate) {
            return Err(ConfigError::Invalid {
                name: "scenario.outlier_rate",
                reason: format!("must lie in [0, 1), got {}", self.outlier_rate),
            });
        }
        if self.fov_half_angle >= std::f64::consts::FRAC_PI_2 {
            return Err(ConfigError::Invalid {
                name: "scenario.fov_half_angle",
                reason: "must be below 90°".into(),
            });
        }
        self.imu_noise.validate()?;
        for (name, value) in [
            ("scenario.sigma_p", self.meas_noise.sigma_p),
            ("scenario.sigma_theta", self.meas_noise.sigma_theta),
            ("scenario.outlier_translation", self.outlier_translation),
            ("scenario.outlier_rotation", self.outlier_rotation),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConfigError::Negative { name, value });
            }
        }
        for o in &self.occlusions {
            if !ids.contains(&o.object_id) || !(o.end >= o.start) {
                return Err(ConfigError::Invalid {
                    name: "scenario.occlusions",
                    reason: format!("bad window for object {}", o.object_id),
                });
            }
        }
        Ok(())
    }

    fn occluded(&self, id: ObjectId, t: f64) -> bool {
        self.occlusions
            .iter()
            .any(|o| o.object_id == id && t >= o.start && t < o.end)
    }
}

/// Ground-truth label for one emitted detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionTruth {
    pub object_id: ObjectId,
    pub outlier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    /// IMU poses in the world at every IMU tick.
    pub ground_truth: Trajectory,
    pub imu_stream: Vec<ImuSample>,
    pub frames: Vec<FrameMeasurement>,
    /// Labels parallel to `frames[i].detections`.
    pub labels: Vec<Vec<DetectionTruth>>,
    pub truth_objects: Vec<SimObject>,
    /// True pose and velocity at the first IMU tick; biases left at zero.
    pub initial_state: CoreState,
    pub true_extrinsics: Pose,
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub anchor_id: ObjectId,
}

impl SimulationOutput {
    pub fn to_log(&self) -> MeasurementLog {
        MeasurementLog {
            header: LogHeader {
                version: crate::log::LOG_VERSION,
                imu_rate: self.imu_rate,
                cam_rate: self.cam_rate,
                object_ids: self.truth_objects.iter().map(|o| o.id).collect(),
                anchor_id: self.anchor_id,
            },
            initial: Some((0.0, self.initial_state)),
            imu: self.imu_stream.clone(),
            frames: self.frames.clone(),
        }
    }

    /// Ground-truth object-world transform `T_OW` of an object.
    pub fn truth_object_world(&self, id: ObjectId) -> Option<Pose> {
        self.truth_objects
            .iter()
            .find(|o| o.id == id)
            .map(|o| o.pose.inverse())
    }
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

fn unit3(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = gauss3(rng);
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Distinct stream ids keep IMU and camera noise independent of each other.
const IMU_STREAM: u64 = 1;
const CAMERA_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ticks `0, 1/rate, …` strictly below `duration`.
fn clock(rate: f64, duration: f64) -> impl Iterator<Item = f64> {
    let n = (duration * rate - 1e-9).ceil().max(0.0) as usize;
    (0..n).map(move |i| i as f64 / rate)
}

/// Generates ground truth, an IMU stream and per-frame detections.
///
/// Detection noise is applied to the camera pose in the object frame, `T_OC`:
/// per-axis Gaussian position noise and an exp-map rotation perturbation.
/// The emitted measurement is its inverse `T_CO`.
pub fn generate(spec: &ScenarioSpec, traj: &TrajectorySpec) -> Result<SimulationOutput, SimError> {
    spec.validate()?;
    traj.validate()?;

    let g = spec.imu_noise.gravity;
    let dt = 1.0 / spec.imu_rate;
    let mut rng = rng_for(spec.seed, IMU_STREAM);
    let mut b_w = spec.initial_gyro_bias;
    let mut b_a = spec.initial_accel_bias;
    let n = &spec.imu_noise;
    let mut imu_stream = Vec::new();
    let mut gt = Vec::new();
    for t in clock(spec.imu_rate, traj.duration) {
        let k = traj.sample(t);
        let r = k.q.to_rotation_matrix();
        let specific_force = r.inverse() * (k.a - g);
        let w_m = k.omega + b_w + gauss3(&mut rng) * (n.sigma_nw / dt.sqrt());
        let a_m = specific_force + b_a + gauss3(&mut rng) * (n.sigma_na / dt.sqrt());
        imu_stream.push(ImuSample::new(t, w_m, a_m));
        gt.push((t, k.pose()));
        b_w += gauss3(&mut rng) * (n.sigma_bw * dt.sqrt());
        b_a += gauss3(&mut rng) * (n.sigma_ba * dt.sqrt());
    }

    let mut rng = rng_for(spec.seed, CAMERA_STREAM);
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    let mn = &spec.meas_noise;
    for t in clock(spec.cam_rate, traj.duration) {
        let t_wc = traj.sample(t).pose().compose(&spec.extrinsics);
        let t_cw = t_wc.inverse();
        let mut detections = Vec::new();
        let mut truth = Vec::new();
        for obj in &spec.objects {
            // Draw every random number up front so visibility does not shift
            // the noise sequence of later detections.
            let pn = gauss3(&mut rng) * mn.sigma_p;
            let rn = gauss3(&mut rng) * mn.sigma_theta;
            let is_outlier = rng.random::<f64>() < spec.outlier_rate;
            let out_dir = unit3(&mut rng);
            let out_axis = unit3(&mut rng);

            let t_co = t_cw.compose(&obj.pose);
            if !visible(&t_co.p, spec) || spec.occluded(obj.id, t) {
                continue;
            }
            let mut t_oc = t_co.inverse();
            t_oc.p += pn;
            t_oc.q = t_oc.q * small_angle_quat(&rn);
            if is_outlier {
                t_oc.p += out_dir * spec.outlier_translation;
                t_oc.q = t_oc.q * small_angle_quat(&(out_axis * spec.outlier_rotation));
            }
            let meas = t_oc.inverse();
            detections.push(ObjectPoseMeasurement {
                t,
                object_id: obj.id,
                p_co: meas.p,
                q_co: meas.q,
            });
            truth.push(DetectionTruth {
                object_id: obj.id,
                outlier: is_outlier,
            });
        }
        frames.push(FrameMeasurement { t, detections });
        labels.push(truth);
    }

    let k0 = traj.sample(0.0);
    Ok(SimulationOutput {
        ground_truth: Trajectory::new(gt),
        imu_stream,
        frames,
        labels,
        truth_objects: spec.objects.clone(),
        initial_state: CoreState {
            p_wi: k0.p,
            v_wi: k0.v,
            q_wi: k0.q,
            ..CoreState::default()
        },
        true_extrinsics: spec.extrinsics,
        imu_rate: spec.imu_rate,
        cam_rate: spec.cam_rate,
        anchor_id: spec.anchor_id,
    })
}

/// Object in front of the camera, inside the view cone and within range.
pub fn visible(p_co: &Vec3, spec: &ScenarioSpec) -> bool {
    let range = p_co.norm();
    p_co.z > 0.0
        && range <= spec.max_range
        && (p_co.z / range).acos() <= spec.fov_half_angle
}
