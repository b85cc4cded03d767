//! Nominal filter state, error-state layout and covariance.
//!
//! Error-state ordering (dimension `21 + 6N`):
//!
//! ```text
//!  0..3   δp_WI      3..6   δv_WI     6..9   δθ_WI
//!  9..12  δb_w      12..15  δb_a     15..18  δp_IC    18..21  δθ_IC
//!  21+6k .. 24+6k   δp_OkW           24+6k .. 27+6k   δθ_OkW
//! ```
//!
//! Rotation errors are local (right) perturbations: `q ← q ⊗ Exp(δθ)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{ConfigError, FilterError};
use crate::propagation::ImuNoiseModel;
use crate::so3::{quat_multiply, small_angle_quat, Pose, Quat, Vec3};
use crate::update::MeasurementNoise;

pub const CORE_DIM: usize = 15;
pub const EXTRINSICS_DIM: usize = 6;
pub const OBJECT_DIM: usize = 6;

pub const P_WI: usize = 0;
pub const V_WI: usize = 3;
pub const THETA_WI: usize = 6;
pub const B_W: usize = 9;
pub const B_A: usize = 12;
pub const P_IC: usize = 15;
pub const THETA_IC: usize = 18;
pub const OBJECTS: usize = CORE_DIM + EXTRINSICS_DIM;

pub const DEFAULT_INIT_WINDOW: usize = 10;

/// 95th percentile of the χ² distribution with 6 degrees of freedom.
pub const CHI2_6DOF_95: f64 = 12.591_587_243_743_977;

/// Error-state dimension for `n` objects.
pub const fn error_dim(n: usize) -> usize {
    OBJECTS + OBJECT_DIM * n
}

/// Start index of object slot `k`'s position error.
pub const fn object_p(k: usize) -> usize {
    OBJECTS + OBJECT_DIM * k
}

/// Start index of object slot `k`'s rotation error.
pub const fn object_theta(k: usize) -> usize {
    OBJECTS + OBJECT_DIM * k + 3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for ObjectId {
    fn from(v: u32) -> Self {
        ObjectId(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoreState {
    pub p_wi: Vec3,
    pub v_wi: Vec3,
    pub q_wi: Quat,
    pub b_w: Vec3,
    pub b_a: Vec3,
}

impl Default for CoreState {
    fn default() -> Self {
        Self {
            p_wi: Vec3::zeros(),
            v_wi: Vec3::zeros(),
            q_wi: Quat::identity(),
            b_w: Vec3::zeros(),
            b_a: Vec3::zeros(),
        }
    }
}

impl CoreState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.p_wi, self.q_wi)
    }
}

/// IMU-camera extrinsics `T_IC`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrinsicsState {
    pub p_ic: Vec3,
    pub q_ic: Quat,
}

impl ExtrinsicsState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.p_ic, self.q_ic)
    }
}

impl From<Pose> for ExtrinsicsState {
    fn from(p: Pose) -> Self {
        Self { p_ic: p.p, q_ic: p.q }
    }
}

/// Per-object transform `T_OkW` placing the navigation world in the object frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectWorldState {
    pub object_id: ObjectId,
    pub p_ow: Vec3,
    pub q_ow: Quat,
    pub initialized: bool,
    pub is_anchor: bool,
}

impl ObjectWorldState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.p_ow, self.q_ow)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub core: CoreState,
    pub extrinsics: ExtrinsicsState,
    pub objects: Vec<ObjectWorldState>,
    /// Per slot: object poses relative to the anchor, `T_OkO_anchor`, seen
    /// while the object waits for initialization.
    pub pending: Vec<Vec<Pose>>,
    pub timestamp: f64,
}

impl FilterState {
    pub fn error_dim(&self) -> usize {
        error_dim(self.objects.len())
    }

    /// Slot index of an object id.
    pub fn slot(&self, id: ObjectId) -> Option<usize> {
        self.objects.iter().position(|o| o.object_id == id)
    }

    pub fn anchor_slot(&self) -> usize {
        self.objects
            .iter()
            .position(|o| o.is_anchor)
            .expect("filter state always carries an anchor")
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectWorldState> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    /// Camera pose in the navigation world, `T_WC = T_WI ∘ T_IC`.
    pub fn camera_pose(&self) -> Pose {
        self.core.pose().compose(&self.extrinsics.pose())
    }

    /// Applies an error-state correction to the nominal state.
    ///
    /// Translational segments are added, rotations are right-multiplied by
    /// `Exp(δθ)`. Segments whose correction is exactly zero are left
    /// untouched so that fixed sub-states stay bit-identical.
    pub fn inject_error(&mut self, delta: &DVector<f64>) -> Result<(), FilterError> {
        let n = self.error_dim();
        if delta.len() != n {
            return Err(FilterError::DimensionMismatch {
                expected: n,
                got: delta.len(),
            });
        }
        let seg = |i: usize| Vec3::new(delta[i], delta[i + 1], delta[i + 2]);

        let c = &mut self.core;
        add_translation(&mut c.p_wi, &seg(P_WI));
        add_translation(&mut c.v_wi, &seg(V_WI));
        add_rotation(&mut c.q_wi, &seg(THETA_WI));
        add_translation(&mut c.b_w, &seg(B_W));
        add_translation(&mut c.b_a, &seg(B_A));
        add_translation(&mut self.extrinsics.p_ic, &seg(P_IC));
        add_rotation(&mut self.extrinsics.q_ic, &seg(THETA_IC));
        for (k, o) in self.objects.iter_mut().enumerate() {
            add_translation(&mut o.p_ow, &seg(object_p(k)));
            add_rotation(&mut o.q_ow, &seg(object_theta(k)));
        }
        Ok(())
    }
}

fn add_translation(x: &mut Vec3, d: &Vec3) {
    if *d != Vec3::zeros() {
        *x += d;
    }
}

fn add_rotation(q: &mut Quat, d: &Vec3) {
    if *d != Vec3::zeros() {
        *q = quat_multiply(q, &small_angle_quat(d));
    }
}

/// Square error-state covariance, block-indexed by the layout above.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance(pub DMatrix<f64>);

impl ErrorCovariance {
    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        Self(DMatrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `P ← (P + Pᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim();
        for i in 0..n {
            for j in (i + 1)..n {
                let m = 0.5 * (self.0[(i, j)] + self.0[(j, i)]);
                self.0[(i, j)] = m;
                self.0[(j, i)] = m;
            }
        }
    }

    /// Square diagonal block starting at `start`.
    pub fn block(&self, start: usize, size: usize) -> DMatrix<f64> {
        self.0.view((start, start), (size, size)).into_owned()
    }

    pub fn block_trace(&self, start: usize, size: usize) -> f64 {
        (start..start + size).map(|i| self.0[(i, i)]).sum()
    }

    /// Clears all rows and columns of a segment and writes `diag` on its diagonal.
    pub fn reset_block(&mut self, start: usize, diag: &[f64]) {
        let n = self.dim();
        for (o, &d) in diag.iter().enumerate() {
            let i = start + o;
            for j in 0..n {
                self.0[(i, j)] = 0.0;
                self.0[(j, i)] = 0.0;
            }
            self.0[(i, i)] = d;
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.0 - self.0.transpose()).amax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = 0.5 * (&self.0 + self.0.transpose());
        sym.symmetric_eigenvalues().min()
    }
}

/// Standard deviations of the initial error state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialUncertainty {
    pub position: f64,
    pub velocity: f64,
    pub attitude: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
    pub extrinsic_position: f64,
    pub extrinsic_attitude: f64,
    pub object_position: f64,
    pub object_attitude: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            position: 0.2,
            velocity: 0.2,
            attitude: 30f64.to_radians(),
            gyro_bias: 0.01,
            accel_bias: 0.1,
            extrinsic_position: 0.05,
            extrinsic_attitude: 0.05,
            object_position: 10.0,
            object_attitude: 1.0,
        }
    }
}

impl InitialUncertainty {
    fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("initial.position", self.position),
            ("initial.velocity", self.velocity),
            ("initial.attitude", self.attitude),
            ("initial.gyro_bias", self.gyro_bias),
            ("initial.accel_bias", self.accel_bias),
            ("initial.extrinsic_position", self.extrinsic_position),
            ("initial.extrinsic_attitude", self.extrinsic_attitude),
            ("initial.object_position", self.object_position),
            ("initial.object_attitude", self.object_attitude),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    pub fn object_diag(&self) -> [f64; 6] {
        let p = self.object_position.powi(2);
        let a = self.object_attitude.powi(2);
        [p, p, p, a, a, a]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub object_ids: Vec<ObjectId>,
    pub anchor_id: ObjectId,
    /// Prior for `T_IC`.
    pub extrinsics: Pose,
    pub initial: InitialUncertainty,
    pub imu_noise: ImuNoiseModel,
    pub meas_noise: MeasurementNoise,
    /// Per-object χ² acceptance threshold on the 6-DoF innovation.
    pub gate_threshold: f64,
    /// Number of detections, each paired with an anchor detection in the
    /// same frame, averaged to place a non-anchor object. One places it
    /// from its first detection.
    pub init_window: usize,
}

impl FilterConfig {
    pub fn new(object_ids: Vec<ObjectId>, anchor_id: ObjectId, extrinsics: Pose) -> Self {
        Self {
            object_ids,
            anchor_id,
            extrinsics,
            initial: InitialUncertainty::default(),
            imu_noise: ImuNoiseModel::filter_default(),
            meas_noise: MeasurementNoise::default(),
            gate_threshold: CHI2_6DOF_95,
            init_window: DEFAULT_INIT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.object_ids.is_empty() {
            return Err(ConfigError::NoObjects);
        }
        let mut seen = self.object_ids.clone();
        seen.sort();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(ConfigError::DuplicateObject(w[0]));
        }
        if !self.object_ids.contains(&self.anchor_id) {
            return Err(ConfigError::AnchorNotDeclared(self.anchor_id));
        }
        self.initial.validate()?;
        self.imu_noise.validate()?;
        self.meas_noise.validate()?;
        if self.init_window == 0 {
            return Err(ConfigError::Invalid {
                name: "init_window",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.gate_threshold > 0.0) {
            return Err(ConfigError::NonPositive {
                name: "gate_threshold",
                value: self.gate_threshold,
            });
        }
        Ok(())
    }
}

/// Builds the initial state and covariance.
///
/// The IMU starts at the origin of the navigation world with identity
/// attitude, zero velocity and zero biases. All objects start uninitialized.
pub fn new_filter(config: &FilterConfig) -> Result<(FilterState, ErrorCovariance), ConfigError> {
    new_filter_at(config, CoreState::default(), 0.0)
}

/// Like [`new_filter`] but starting from a known core state.
pub fn new_filter_at(
    config: &FilterConfig,
    core: CoreState,
    timestamp: f64,
) -> Result<(FilterState, ErrorCovariance), ConfigError> {
    config.validate()?;
    let objects: Vec<_> = config
        .object_ids
        .iter()
        .map(|&id| ObjectWorldState {
            object_id: id,
            p_ow: Vec3::zeros(),
            q_ow: Quat::identity(),
            initialized: false,
            is_anchor: id == config.anchor_id,
        })
        .collect();
    let state = FilterState {
        core,
        extrinsics: config.extrinsics.into(),
        pending: vec![Vec::new(); objects.len()],
        objects,
        timestamp,
    };

    let u = &config.initial;
    let mut diag = Vec::with_capacity(state.error_dim());
    for s in [
        u.position,
        u.velocity,
        u.attitude,
        u.gyro_bias,
        u.accel_bias,
        u.extrinsic_position,
        u.extrinsic_attitude,
    ] {
        diag.extend([s * s; 3]);
    }
    for _ in &state.objects {
        diag.extend(u.object_diag());
    }
    let cov = ErrorCovariance::from_diagonal(&DVector::from_vec(diag));
    Ok((state, cov))
}
