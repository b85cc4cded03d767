//! Object-relative pose measurement model and EKF correction.
//!
//! Each detection reports `T_COk`; the filter works with its inverse `T_OkC`
//! and predicts it through the chain `T_OkW ∘ T_WI ∘ T_IC`. Residuals are
//! `[p_OkC - ẑ_p ; 2 q_v / q_w of ẑ_q⁻¹ ⊗ q_OkC]`, the Jacobian `H` is the
//! derivative of the prediction with respect to the error state, so that
//! `r(x ⊕ δ) ≈ r(x) - H δ`.

use nalgebra::{DMatrix, DVector, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, FilterError};
use crate::so3::{
    mean_pose, quat_multiply, quat_residual_to_rotvec, quat_to_rotmat, skew, Mat3, Pose, Quat, Vec3,
};
use crate::state::{
    object_p, object_theta, ErrorCovariance, FilterConfig, FilterState, ObjectId, P_IC, P_WI,
    THETA_IC, THETA_WI,
};

pub type Residual = Vector6<f64>;

/// Fixed per-axis measurement standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementNoise {
    /// Position, m.
    pub sigma_p: f64,
    /// Orientation, rad.
    pub sigma_theta: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            sigma_p: 0.10,
            sigma_theta: 20f64.to_radians(),
        }
    }
}

impl MeasurementNoise {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, value) in [
            ("measurement.sigma_p", self.sigma_p),
            ("measurement.sigma_theta", self.sigma_theta),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    pub fn diagonal(&self) -> [f64; 6] {
        let p = self.sigma_p.powi(2);
        let a = self.sigma_theta.powi(2);
        [p, p, p, a, a, a]
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(&self.diagonal()))
    }
}

/// Pose of one object in the camera frame, `T_COk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectPoseMeasurement {
    pub t: f64,
    pub object_id: ObjectId,
    pub p_co: Vec3,
    pub q_co: Quat,
}

impl ObjectPoseMeasurement {
    pub fn pose(&self) -> Pose {
        Pose::new(self.p_co, self.q_co)
    }
}

/// All detections from one camera image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMeasurement {
    pub t: f64,
    pub detections: Vec<ObjectPoseMeasurement>,
}

/// Camera pose in the object frame, `T_OkC = T_COk⁻¹`.
pub fn invert_measurement(m: &ObjectPoseMeasurement) -> Pose {
    let q_oc = m.q_co.inverse();
    Pose::new(-(quat_to_rotmat(&q_oc) * m.p_co), q_oc)
}

fn initialized_object(state: &FilterState, k: usize) -> Result<Pose, FilterError> {
    let o = &state.objects[k];
    if !o.initialized {
        return Err(FilterError::Uninitialized(o.object_id));
    }
    Ok(o.pose())
}

/// Predicted `T_OkC` for object slot `k`.
pub fn predict_measurement(state: &FilterState, k: usize) -> Result<Pose, FilterError> {
    let ow = initialized_object(state, k)?;
    let c = &state.core;
    let e = &state.extrinsics;
    let r_ow = quat_to_rotmat(&ow.q);
    let r_wi = quat_to_rotmat(&c.q_wi);
    let p = ow.p + r_ow * (c.p_wi + r_wi * e.p_ic);
    let q = quat_multiply(&quat_multiply(&ow.q, &c.q_wi), &e.q_ic);
    Ok(Pose::new(p, q))
}

/// Residual of a measurement against the prediction for slot `k`.
pub fn residual(
    m: &ObjectPoseMeasurement,
    state: &FilterState,
    k: usize,
) -> Result<Residual, FilterError> {
    let z = invert_measurement(m);
    let zhat = predict_measurement(state, k)?;
    let dp = z.p - zhat.p;
    let dq = quat_multiply(&zhat.q.inverse(), &z.q);
    let dr = quat_residual_to_rotvec(&dq)?;
    Ok(Residual::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z))
}

/// Measurement Jacobian `H_Ok` (6 × error dimension) for slot `k`.
///
/// Blocks of every other object are zero. When `k` is the anchor its own
/// object-world blocks are zeroed too, which keeps the anchor fixed.
pub fn jacobian(state: &FilterState, k: usize) -> DMatrix<f64> {
    let n = state.error_dim();
    let mut h = DMatrix::zeros(6, n);
    let o = &state.objects[k];
    let c = &state.core;
    let e = &state.extrinsics;
    let r_ow = quat_to_rotmat(&o.q_ow);
    let r_wi = quat_to_rotmat(&c.q_wi);
    let r_ic = quat_to_rotmat(&e.q_ic);

    let mut put = |row: usize, col: usize, m: Mat3| {
        h.fixed_view_mut::<3, 3>(row, col).copy_from(&m);
    };
    put(0, P_WI, r_ow);
    put(0, THETA_WI, -r_ow * r_wi * skew(&e.p_ic));
    put(0, P_IC, r_ow * r_wi);
    put(3, THETA_WI, r_ic.transpose());
    put(3, THETA_IC, Mat3::identity());
    if !o.is_anchor {
        put(0, object_p(k), Mat3::identity());
        put(
            0,
            object_theta(k),
            -r_ow * skew(&c.p_wi) - r_ow * skew(&(r_wi * e.p_ic)),
        );
        put(3, object_theta(k), r_ic.transpose() * r_wi.transpose());
    }
    h
}

/// Outcome of the χ² innovation test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateResult {
    pub accepted: bool,
    /// `rᵀ S⁻¹ r`; `None` when `S` could not be inverted.
    pub statistic: Option<f64>,
}

/// χ² test of a residual against its innovation covariance `S = H P Hᵀ + R`.
pub fn chi2_gate(
    r: &DVector<f64>,
    h: &DMatrix<f64>,
    p: &DMatrix<f64>,
    r_meas: &DMatrix<f64>,
    threshold: f64,
) -> GateResult {
    let s = h * p * h.transpose() + r_meas;
    match s.cholesky() {
        Some(chol) => {
            let stat = r.dot(&chol.solve(r));
            GateResult {
                accepted: stat.is_finite() && stat <= threshold,
                statistic: Some(stat),
            }
        }
        None => GateResult {
            accepted: false,
            statistic: None,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionStatus {
    Accepted,
    /// Failed the χ² test.
    Gated,
    /// Rotation error too close to 180° to linearize.
    ResidualTooLarge,
    /// Innovation covariance not positive definite.
    SingularInnovation,
    /// The frame was skipped before this detection was evaluated.
    NotEvaluated,
    /// Held back to place a not yet initialized object.
    Buffered,
    UnknownObject,
    /// A second detection of the same object in one frame.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub object_id: u32,
    pub status: DetectionStatus,
    pub chi2: Option<f64>,
    pub residual: Option<[f64; 6]>,
    /// This detection initialized the object's world frame.
    pub initialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    AnchorNotVisible,
    AllRejected,
    SingularInnovation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub t: f64,
    pub applied: bool,
    pub skip_reason: Option<SkipReason>,
    pub detections: Vec<DetectionReport>,
}

impl UpdateReport {
    pub fn accepted(&self) -> usize {
        self.count(DetectionStatus::Accepted)
    }

    pub fn count(&self, status: DetectionStatus) -> usize {
        self.detections.iter().filter(|d| d.status == status).count()
    }

    pub fn rejected(&self) -> usize {
        self.detections
            .iter()
            .filter(|d| {
                !matches!(
                    d.status,
                    DetectionStatus::Accepted
                        | DetectionStatus::NotEvaluated
                        | DetectionStatus::Buffered
                )
            })
            .count()
    }
}

/// Places object slot `k`'s world frame from the current camera estimate and
/// the measurement, and resets its covariance block (zero for the anchor).
pub fn init_object_world(
    state: &mut FilterState,
    cov: &mut ErrorCovariance,
    m: &ObjectPoseMeasurement,
    k: usize,
    prior: &[f64; 6],
) -> Result<(), FilterError> {
    let id = state.objects[k].object_id;
    if state.objects[k].initialized {
        return Err(FilterError::AlreadyInitialized(id));
    }
    let anchor = state.anchor_slot();
    if k != anchor && !state.objects[anchor].initialized {
        return Err(FilterError::AnchorNotInitialized(id));
    }
    let z = invert_measurement(m);
    let c = state.core;
    let e = state.extrinsics;
    let q_ow = quat_multiply(&quat_multiply(&z.q, &e.q_ic.inverse()), &c.q_wi.inverse());
    let r_ow = quat_to_rotmat(&q_ow);
    let p_ow = z.p - r_ow * (quat_to_rotmat(&c.q_wi) * e.p_ic + c.p_wi);
    place_object(state, cov, k, Pose::new(p_ow, q_ow), prior);
    Ok(())
}

fn place_object(state: &mut FilterState, cov: &mut ErrorCovariance, k: usize, t_ow: Pose, prior: &[f64; 6]) {
    let o = &mut state.objects[k];
    o.q_ow = t_ow.q;
    o.p_ow = t_ow.p;
    o.initialized = true;
    state.pending[k].clear();
    let diag = if o.is_anchor { [0.0; 6] } else { *prior };
    cov.reset_block(object_p(k), &diag);
}

/// Mean of `samples` after dropping those whose rotation lies more than
/// twice the median angle away from a first mean. Keeps single gross
/// outliers from steering the result.
pub fn trimmed_mean_pose(samples: &[Pose]) -> Option<Pose> {
    let first = mean_pose(samples)?;
    let angles: Vec<f64> = samples.iter().map(|s| s.q.angle_to(&first.q)).collect();
    let mut sorted = angles.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = 2.0 * sorted[sorted.len() / 2];
    let kept: Vec<Pose> = samples
        .iter()
        .zip(&angles)
        .filter(|(_, &a)| a <= cut)
        .map(|(s, _)| *s)
        .collect();
    mean_pose(&kept)
}

struct Candidate<'a> {
    m: &'a ObjectPoseMeasurement,
    slot: Option<usize>,
    report: DetectionReport,
}

/// Processes one camera frame: anchor check, first-sight initialization,
/// per-object gating and a single stacked EKF correction.
///
/// The state must already be propagated to the frame time.
pub fn apply_frame(
    state: &mut FilterState,
    cov: &mut ErrorCovariance,
    frame: &FrameMeasurement,
    config: &FilterConfig,
) -> UpdateReport {
    let mut dets: Vec<&ObjectPoseMeasurement> = frame.detections.iter().collect();
    dets.sort_by_key(|d| d.object_id);

    let mut cands: Vec<Candidate> = Vec::with_capacity(dets.len());
    for m in dets {
        let slot = state.slot(m.object_id);
        let duplicate = cands.iter().any(|c| c.m.object_id == m.object_id);
        let status = match (slot, duplicate) {
            (None, _) => DetectionStatus::UnknownObject,
            (Some(_), true) => DetectionStatus::Duplicate,
            (Some(_), false) => DetectionStatus::NotEvaluated,
        };
        cands.push(Candidate {
            m,
            slot: if status == DetectionStatus::NotEvaluated {
                slot
            } else {
                None
            },
            report: DetectionReport {
                object_id: m.object_id.0,
                status,
                chi2: None,
                residual: None,
                initialized: false,
            },
        });
    }

    let anchor = state.anchor_slot();
    let finish = |cands: Vec<Candidate>, applied, skip| UpdateReport {
        t: frame.t,
        applied,
        skip_reason: skip,
        detections: cands.into_iter().map(|c| c.report).collect(),
    };

    if !cands.iter().any(|c| c.slot == Some(anchor)) {
        return finish(cands, false, Some(SkipReason::AnchorNotVisible));
    }

    // Anchor first, then the rest in id order.
    let prior = config.initial.object_diag();
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by_key(|&i| cands[i].slot != Some(anchor));
    let anchor_m = cands
        .iter()
        .find(|c| c.slot == Some(anchor))
        .map(|c| c.m)
        .expect("anchor present");
    for i in order {
        let Some(k) = cands[i].slot else { continue };
        if state.objects[k].initialized {
            continue;
        }
        if k == anchor || config.init_window <= 1 {
            init_object_world(state, cov, cands[i].m, k, &prior)
                .expect("anchor is initialized before any other object");
            cands[i].report.initialized = true;
            continue;
        }
        let relative = invert_measurement(cands[i].m).compose(&anchor_m.pose());
        state.pending[k].push(relative);
        if state.pending[k].len() >= config.init_window {
            let t_oa = trimmed_mean_pose(&state.pending[k]).expect("window is not empty");
            let t_ow = t_oa.compose(&state.objects[anchor].pose());
            place_object(state, cov, k, t_ow, &prior);
            cands[i].report.initialized = true;
        } else {
            cands[i].report.status = DetectionStatus::Buffered;
            cands[i].slot = None;
        }
    }

    let r_meas = config.meas_noise.covariance();
    let mut rows: Vec<(Residual, DMatrix<f64>)> = Vec::new();
    for c in cands.iter_mut() {
        let Some(k) = c.slot else { continue };
        let r = match residual(c.m, state, k) {
            Ok(r) => r,
            Err(_) => {
                c.report.status = DetectionStatus::ResidualTooLarge;
                continue;
            }
        };
        let h = jacobian(state, k);
        let rv = DVector::from_column_slice(r.as_slice());
        let gate = chi2_gate(&rv, &h, &cov.0, &r_meas, config.gate_threshold);
        c.report.residual = Some(r.into());
        c.report.chi2 = gate.statistic;
        c.report.status = match (gate.accepted, gate.statistic) {
            (true, _) => DetectionStatus::Accepted,
            (false, None) => DetectionStatus::SingularInnovation,
            (false, Some(_)) => DetectionStatus::Gated,
        };
        if gate.accepted {
            rows.push((r, h));
        }
    }

    if rows.is_empty() {
        return finish(cands, false, Some(SkipReason::AllRejected));
    }
    if stacked_update(state, cov, &rows, &config.meas_noise).is_err() {
        for c in cands.iter_mut() {
            if c.report.status == DetectionStatus::Accepted {
                c.report.status = DetectionStatus::SingularInnovation;
            }
        }
        return finish(cands, false, Some(SkipReason::SingularInnovation));
    }
    finish(cands, true, None)
}

/// Joint EKF correction from stacked per-object residuals and Jacobians.
///
/// Covariance update uses the Joseph form followed by symmetrization.
pub fn stacked_update(
    state: &mut FilterState,
    cov: &mut ErrorCovariance,
    rows: &[(Residual, DMatrix<f64>)],
    noise: &MeasurementNoise,
) -> Result<(), FilterError> {
    let n = state.error_dim();
    let m = 6 * rows.len();
    let mut r = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, n);
    let mut rm = DMatrix::zeros(m, m);
    let diag = noise.diagonal();
    for (i, (ri, hi)) in rows.iter().enumerate() {
        r.rows_mut(6 * i, 6).copy_from(ri);
        h.rows_mut(6 * i, 6).copy_from(hi);
        for (j, d) in diag.iter().enumerate() {
            rm[(6 * i + j, 6 * i + j)] = *d;
        }
    }
    let p = &cov.0;
    let pht = p * h.transpose();
    let s = &h * &pht + &rm;
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation)?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ.
    let k = chol.solve(&pht.transpose()).transpose();
    let dx = &k * &r;
    state.inject_error(&dx)?;

    let ikh = DMatrix::identity(n, n) - &k * &h;
    let joseph = &ikh * p * ikh.transpose() + &k * &rm * k.transpose();
    cov.0 = joseph;
    cov.symmetrize();
    Ok(())
}
