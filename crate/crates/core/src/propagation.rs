//! Strapdown IMU propagation of the nominal state and error covariance.

use nalgebra::{DMatrix, SMatrix};

use crate::error::{ConfigError, FilterError};
use crate::so3::{quat_multiply, quat_to_rotmat, skew, small_angle_quat, Mat3, Vec3};
use crate::state::{ErrorCovariance, FilterState, B_A, B_W, CORE_DIM, P_WI, THETA_WI, V_WI};

pub type CoreMatrix = SMatrix<f64, CORE_DIM, CORE_DIM>;

/// Largest single propagation step.
pub const MAX_STEP: f64 = 0.1;
/// Sub-step used when bridging gaps longer than [`MAX_STEP`].
pub const GAP_SUBSTEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Measured angular velocity, body frame (rad/s).
    pub w_m: Vec3,
    /// Measured specific force, body frame (m/s²).
    pub a_m: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, w_m: Vec3, a_m: Vec3) -> Self {
        Self { t, w_m, a_m }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.w_m.iter().all(|x| x.is_finite())
            && self.a_m.iter().all(|x| x.is_finite())
    }
}

/// Continuous-time IMU noise densities and the gravity vector.
///
/// `gravity` is the gravitational acceleration in the world frame, so a
/// level accelerometer at rest reads `-gravity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuNoiseModel {
    /// Accelerometer white noise, m/s²/√Hz.
    pub sigma_na: f64,
    /// Gyroscope white noise, rad/s/√Hz.
    pub sigma_nw: f64,
    /// Accelerometer bias random walk, m/s³/√Hz.
    pub sigma_ba: f64,
    /// Gyroscope bias random walk, rad/s²/√Hz.
    pub sigma_bw: f64,
    pub gravity: Vec3,
}

impl Default for ImuNoiseModel {
    /// Generic consumer-grade MEMS values.
    fn default() -> Self {
        Self {
            sigma_na: 2.0e-3,
            sigma_nw: 1.7e-4,
            sigma_ba: 3.0e-4,
            sigma_bw: 2.0e-5,
            gravity: Vec3::new(0.0, 0.0, -9.81),
        }
    }
}

impl ImuNoiseModel {
    /// Filter-side default. The accelerometer density is far above the
    /// sensor's so that it also covers the gravity direction error left
    /// by an anchor placed from one noisy detection.
    pub fn filter_default() -> Self {
        Self {
            sigma_na: 5.0,
            ..Self::default()
        }
    }

    pub fn noiseless(gravity: Vec3) -> Self {
        Self {
            sigma_na: 0.0,
            sigma_nw: 0.0,
            sigma_ba: 0.0,
            sigma_bw: 0.0,
            gravity,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("imu.sigma_na", self.sigma_na),
            ("imu.sigma_nw", self.sigma_nw),
            ("imu.sigma_ba", self.sigma_ba),
            ("imu.sigma_bw", self.sigma_bw),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ConfigError::Negative { name, value });
            }
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(ConfigError::Invalid {
                name: "imu.gravity",
                reason: "non-finite component".into(),
            });
        }
        Ok(())
    }

    /// Discrete process noise for one step of length `dt`.
    pub fn process_noise(&self, dt: f64) -> CoreMatrix {
        let mut q = CoreMatrix::zeros();
        for i in 0..3 {
            q[(V_WI + i, V_WI + i)] = self.sigma_na.powi(2) * dt;
            q[(THETA_WI + i, THETA_WI + i)] = self.sigma_nw.powi(2) * dt;
            q[(B_W + i, B_W + i)] = self.sigma_bw.powi(2) * dt;
            q[(B_A + i, B_A + i)] = self.sigma_ba.powi(2) * dt;
        }
        q
    }
}

/// First-order discrete transition `F = I + A dt` of the core error state.
pub fn transition_matrix(state: &FilterState, sample: &ImuSample, dt: f64) -> CoreMatrix {
    let r = quat_to_rotmat(&state.core.q_wi);
    let a = sample.a_m - state.core.b_a;
    let w = sample.w_m - state.core.b_w;
    let mut f = CoreMatrix::identity();
    let blocks = [
        (P_WI, V_WI, Mat3::identity()),
        (V_WI, THETA_WI, -r * skew(&a)),
        (V_WI, B_A, -r),
        (THETA_WI, THETA_WI, -skew(&w)),
        (THETA_WI, B_W, -Mat3::identity()),
    ];
    for (row, col, m) in blocks {
        let mut view = f.fixed_view_mut::<3, 3>(row, col);
        view += m * dt;
    }
    f
}

/// Integrates the nominal core state over one step with a held sample.
///
/// Attitude uses the exact axis-angle increment of the bias-corrected rate;
/// velocity and position use the trapezoid rule over the step.
pub fn integrate_nominal(state: &mut FilterState, sample: &ImuSample, dt: f64, gravity: &Vec3) {
    let c = &mut state.core;
    let w = sample.w_m - c.b_w;
    let a = sample.a_m - c.b_a;
    let r0 = quat_to_rotmat(&c.q_wi);
    let q1 = quat_multiply(&c.q_wi, &small_angle_quat(&(w * dt)));
    let r1 = quat_to_rotmat(&q1);
    let acc0 = r0 * a + gravity;
    let acc1 = r1 * a + gravity;
    let v1 = c.v_wi + (acc0 + acc1) * (0.5 * dt);
    c.p_wi += (c.v_wi + v1) * (0.5 * dt);
    c.v_wi = v1;
    c.q_wi = q1;
}

/// One propagation step of length `dt` using `sample` held over the step.
///
/// Only the core block of the covariance changes dynamically; extrinsics and
/// object-world blocks have identity dynamics and no process noise, so their
/// cross-covariances with the core are multiplied by `F` and nothing else.
pub fn propagate(
    state: &mut FilterState,
    cov: &mut ErrorCovariance,
    sample: &ImuSample,
    dt: f64,
    noise: &ImuNoiseModel,
) -> Result<(), FilterError> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(FilterError::DtOutOfRange { dt, max: MAX_STEP });
    }
    if !sample.is_finite() {
        return Err(FilterError::NonFiniteSample(sample.t));
    }
    let f = transition_matrix(state, sample, dt);
    integrate_nominal(state, sample, dt, &noise.gravity);
    state.timestamp += dt;

    let n = cov.dim();
    let p = &mut cov.0;
    let pcc = p.fixed_view::<CORE_DIM, CORE_DIM>(0, 0).into_owned();
    let pcc_new = f * pcc * f.transpose() + noise.process_noise(dt);
    p.fixed_view_mut::<CORE_DIM, CORE_DIM>(0, 0).copy_from(&pcc_new);
    if n > CORE_DIM {
        let rest = n - CORE_DIM;
        let pcr: DMatrix<f64> = p.view((0, CORE_DIM), (CORE_DIM, rest)).into_owned();
        let pcr_new = f * pcr;
        p.view_mut((0, CORE_DIM), (CORE_DIM, rest)).copy_from(&pcr_new);
        p.view_mut((CORE_DIM, 0), (rest, CORE_DIM))
            .copy_from(&pcr_new.transpose());
    }
    cov.symmetrize();
    Ok(())
}

/// Propagates across an interval of any positive length, splitting spans
/// longer than [`MAX_STEP`] into [`GAP_SUBSTEP`] pieces with the sample held.
pub fn propagate_span(
    state: &mut FilterState,
    cov: &mut ErrorCovariance,
    sample: &ImuSample,
    dt: f64,
    noise: &ImuNoiseModel,
) -> Result<(), FilterError> {
    if dt <= MAX_STEP {
        return propagate(state, cov, sample, dt, noise);
    }
    if !dt.is_finite() {
        return Err(FilterError::DtOutOfRange { dt, max: MAX_STEP });
    }
    let steps = (dt / GAP_SUBSTEP).ceil() as usize;
    let h = dt / steps as f64;
    for _ in 0..steps {
        propagate(state, cov, sample, h, noise)?;
    }
    Ok(())
}
