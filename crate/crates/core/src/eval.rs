//! Trajectory association, rigid alignment and error metrics.

use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::so3::{quat_multiply, quat_to_rotmat, Mat3, Pose, Quat, Vec3};

/// Time-sorted sequence of stamped poses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    samples: Vec<(f64, Pose)>,
}

impl Trajectory {
    /// Wraps samples that are already sorted by strictly increasing time.
    pub fn new(samples: Vec<(f64, Pose)>) -> Self {
        debug_assert!(samples.windows(2).all(|w| w[1].0 > w[0].0));
        Self { samples }
    }

    /// Sorts by time and drops later duplicates of a timestamp.
    pub fn from_unsorted(mut samples: Vec<(f64, Pose)>) -> Self {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        samples.dedup_by(|b, a| a.0 == b.0);
        Self { samples }
    }

    pub fn samples(&self) -> &[(f64, Pose)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index of the sample nearest in time to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.samples.is_empty() {
            return None;
        }
        let idx = self.samples.partition_point(|s| s.0 < t);
        let cands = [idx.checked_sub(1), (idx < self.samples.len()).then_some(idx)];
        cands
            .into_iter()
            .flatten()
            .min_by(|&a, &b| {
                (self.samples[a].0 - t)
                    .abs()
                    .total_cmp(&(self.samples[b].0 - t).abs())
            })
    }

    pub fn transformed(&self, tf: &Alignment) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().map(|(t, p)| (*t, tf.apply(p))).collect(),
        }
    }
}

/// One associated estimate/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePair {
    pub t: f64,
    pub est: Pose,
    pub gt: Pose,
}

/// Pairs every estimate with the nearest ground-truth sample within `max_dt`.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Result<Vec<PosePair>, EvalError> {
    if !(max_dt > 0.0) {
        return Err(EvalError::InvalidMaxDt);
    }
    let pairs: Vec<_> = est
        .samples()
        .iter()
        .filter_map(|&(t, e)| {
            let j = gt.nearest(t)?;
            let (tg, g) = gt.samples()[j];
            ((tg - t).abs() <= max_dt).then_some(PosePair { t, est: e, gt: g })
        })
        .collect();
    if pairs.is_empty() {
        return Err(EvalError::NoPairs { max_dt });
    }
    Ok(pairs)
}

/// Similarity transform `x ↦ s R x + t` mapping estimate into ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub rotation: Quat,
    pub translation: Vec3,
    pub scale: f64,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            rotation: Quat::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Pose) -> Pose {
        Pose::new(
            self.scale * (quat_to_rotmat(&self.rotation) * p.p) + self.translation,
            quat_multiply(&self.rotation, &p.q),
        )
    }
}

/// Closed-form least-squares alignment of paired positions (Umeyama).
///
/// With `with_scale = false` the result is rigid.
pub fn align(pairs: &[PosePair], with_scale: bool) -> Result<Alignment, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::Degenerate(format!(
            "need at least 3 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mu_x = pairs.iter().fold(Vec3::zeros(), |a, p| a + p.est.p) / n;
    let mu_y = pairs.iter().fold(Vec3::zeros(), |a, p| a + p.gt.p) / n;
    let mut sigma = Matrix3::zeros();
    let mut var_x = 0.0;
    for p in pairs {
        let dx = p.est.p - mu_x;
        let dy = p.gt.p - mu_y;
        sigma += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    sigma /= n;
    var_x /= n;

    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if var_x <= 0.0 || sv[1] <= 1e-10 * sv[0].max(1e-300) {
        return Err(EvalError::Degenerate(
            "paired positions are collinear or coincident".into(),
        ));
    }
    let mut s = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        (svd.singular_values.transpose() * s.diagonal())[0] / var_x
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_matrix(&r);
    Ok(Alignment {
        rotation,
        translation: mu_y - scale * (r * mu_x),
        scale,
    })
}

/// Rigid alignment of paired positions.
pub fn align_se3(pairs: &[PosePair]) -> Result<Alignment, EvalError> {
    align(pairs, false)
}

/// Per-axis position and Euler-angle RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// x, y, z in metres.
    pub pos_rmse: [f64; 3],
    /// roll, pitch, yaw in degrees (z-y-x convention).
    pub euler_rmse_deg: [f64; 3],
    pub n_samples: usize,
}

/// `(roll, pitch, yaw)` of `R = Rz(yaw) Ry(pitch) Rx(roll)`.
///
/// Pitch is clamped to ±90°; at the singularity roll absorbs the combined
/// angle and yaw is reported as zero.
pub fn euler_zyx(r: &Mat3) -> Vec3 {
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin();
    if (1.0 - sp.abs()) < 1e-12 {
        let roll = (-r[(1, 2)]).atan2(r[(1, 1)]) * sp.signum();
        return Vec3::new(roll, pitch, 0.0);
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Vec3::new(roll, pitch, yaw)
}

/// RMSE over pairs whose estimates are already aligned to ground truth.
///
/// Orientation error per sample is the Euler decomposition of `R_gtᵀ R_est`.
pub fn rmse(pairs: &[PosePair]) -> Result<RmseReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sp = Vec3::zeros();
    let mut sa = Vec3::zeros();
    for p in pairs {
        let dp = p.est.p - p.gt.p;
        sp += dp.component_mul(&dp);
        let rel = quat_to_rotmat(&p.gt.q).transpose() * quat_to_rotmat(&p.est.q);
        let e = euler_zyx(&rel);
        sa += e.component_mul(&e);
    }
    let n = pairs.len() as f64;
    let pos = (sp / n).map(f64::sqrt);
    let ang = (sa / n).map(|x| x.sqrt().to_degrees());
    Ok(RmseReport {
        pos_rmse: [pos.x, pos.y, pos.z],
        euler_rmse_deg: [ang.x, ang.y, ang.z],
        n_samples: pairs.len(),
    })
}

/// Full evaluation result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub rmse: RmseReport,
    pub alignment: Alignment,
}

/// Associate, align (rigidly unless `with_scale`) and compute RMSE.
pub fn evaluate(
    est: &Trajectory,
    gt: &Trajectory,
    max_dt: f64,
    with_scale: bool,
) -> Result<Evaluation, EvalError> {
    let pairs = associate(est, gt, max_dt)?;
    let alignment = align(&pairs, with_scale)?;
    let aligned: Vec<_> = pairs
        .iter()
        .map(|p| PosePair {
            est: alignment.apply(&p.est),
            ..*p
        })
        .collect();
    Ok(Evaluation {
        rmse: rmse(&aligned)?,
        alignment,
    })
}

/// Position distance and rotation angle between two poses.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    ((a.p - b.p).norm(), a.q.angle_to(&b.q))
}

/// Time from the first sample after which `history` stays within tolerance
/// of `truth` for the rest of the record. `None` if the last sample is still
/// outside tolerance or the history is empty.
pub fn convergence_time(
    history: &[(f64, Pose)],
    truth: &Pose,
    pos_tol: f64,
    ang_tol: f64,
) -> Option<f64> {
    let t0 = history.first()?.0;
    let outside = |p: &Pose| {
        let (dp, da) = pose_error(p, truth);
        dp > pos_tol || da > ang_tol
    };
    match history.iter().rposition(|(_, p)| outside(p)) {
        None => Some(0.0),
        Some(i) if i + 1 == history.len() => None,
        Some(i) => Some(history[i + 1].0 - t0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::small_angle_quat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::FRAC_PI_2;

    fn helix(n: usize, dt: f64, offset: f64) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| {
                    let t = offset + i as f64 * dt;
                    let p = Vec3::new(t.cos() * 2.0, t.sin() * 1.5, 0.3 * t);
                    (t, Pose::new(p, small_angle_quat(&Vec3::new(0.1 * t, -0.05, 0.4 * t))))
                })
                .collect(),
        )
    }

    #[test]
    fn identical_sets_pair_fully() {
        let a = helix(50, 0.1, 0.0);
        let pairs = associate(&a, &a, 0.01).unwrap();
        assert_eq!(pairs.len(), 50);
        assert!(pairs.iter().all(|p| p.est == p.gt));
    }

    #[test]
    fn disjoint_ranges_fail() {
        let a = helix(10, 0.1, 0.0);
        let b = helix(10, 0.1, 100.0);
        assert_eq!(
            associate(&a, &b, 0.05).unwrap_err(),
            EvalError::NoPairs { max_dt: 0.05 }
        );
    }

    #[test]
    fn half_period_offset_pairs_with_brute_force_nearest() {
        let gt = helix(40, 0.1, 0.0);
        let est = helix(40, 0.1, 0.04);
        let pairs = associate(&est, &gt, 0.1).unwrap();
        for p in &pairs {
            let brute = gt
                .samples()
                .iter()
                .min_by(|a, b| (a.0 - p.t).abs().total_cmp(&(b.0 - p.t).abs()))
                .unwrap();
            assert_eq!(p.gt, brute.1);
        }
        assert_eq!(pairs.len(), 40);
    }

    #[test]
    fn align_identity_and_constructed() {
        let gt = helix(60, 0.1, 0.0);
        let pairs = associate(&gt, &gt, 0.01).unwrap();
        let a = align_se3(&pairs).unwrap();
        assert!(a.rotation.angle() < 1e-9);
        assert!(a.translation.norm() < 1e-9);

        // est = gt rotated 90° about z and shifted (1,0,0): the alignment is the inverse.
        let tf = Alignment {
            rotation: small_angle_quat(&Vec3::new(0.0, 0.0, FRAC_PI_2)),
            translation: Vec3::new(1.0, 0.0, 0.0),
            scale: 1.0,
        };
        let est = gt.transformed(&tf);
        let pairs = associate(&est, &gt, 0.01).unwrap();
        let a = align_se3(&pairs).unwrap();
        let expected_r = small_angle_quat(&Vec3::new(0.0, 0.0, -FRAC_PI_2));
        assert!(a.rotation.angle_to(&expected_r) < 1e-9);
        let expected_t = -(quat_to_rotmat(&expected_r) * tf.translation);
        assert!((a.translation - expected_t).norm() < 1e-9);
    }

    #[test]
    fn align_noisy_random_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let gt = Trajectory::new(
            (0..100)
                .map(|i| {
                    let p = Vec3::new(
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(-1.0..1.0),
                    );
                    (i as f64, Pose::new(p, Quat::identity()))
                })
                .collect(),
        );
        let truth = Alignment {
            rotation: small_angle_quat(&Vec3::new(0.3, -1.1, 2.0)),
            translation: Vec3::new(0.5, -2.0, 3.0),
            scale: 1.0,
        };
        // est = truth⁻¹(gt) + noise, so aligning est recovers `truth`.
        let r_inv = truth.rotation.inverse();
        let est = Trajectory::new(
            gt.samples()
                .iter()
                .map(|(t, p)| {
                    let mut q = quat_to_rotmat(&r_inv) * (p.p - truth.translation);
                    q += Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                    (*t, Pose::new(q, r_inv))
                })
                .collect(),
        );
        let pairs = associate(&est, &gt, 0.1).unwrap();
        let a = align_se3(&pairs).unwrap();
        assert!(a.rotation.angle_to(&truth.rotation) < 0.005);
        assert!((a.translation - truth.translation).norm() < 0.005);
    }

    #[test]
    fn collinear_is_degenerate() {
        let line = Trajectory::new(
            (0..20)
                .map(|i| (i as f64, Pose::new(Vec3::new(i as f64, 0.0, 0.0), Quat::identity())))
                .collect(),
        );
        let pairs = associate(&line, &line, 0.1).unwrap();
        assert!(matches!(align_se3(&pairs), Err(EvalError::Degenerate(_))));
    }

    #[test]
    fn scale_recovered_with_sim3() {
        let gt = helix(80, 0.1, 0.0);
        let tf = Alignment {
            rotation: small_angle_quat(&Vec3::new(0.2, 0.1, -0.3)),
            translation: Vec3::new(1.0, 2.0, 3.0),
            scale: 0.5,
        };
        let est = gt.transformed(&tf);
        let pairs = associate(&est, &gt, 0.01).unwrap();
        let a = align(&pairs, true).unwrap();
        assert!((a.scale - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rmse_zero_and_constant_offset() {
        let gt = helix(30, 0.1, 0.0);
        let pairs = associate(&gt, &gt, 0.01).unwrap();
        let r = rmse(&pairs).unwrap();
        assert_eq!(r.pos_rmse, [0.0; 3]);
        assert!(r.euler_rmse_deg.iter().all(|&x| x < 1e-6));

        let shifted: Vec<_> = pairs
            .iter()
            .map(|p| PosePair {
                est: Pose::new(p.gt.p + Vec3::new(0.1, 0.0, 0.0), p.gt.q),
                ..*p
            })
            .collect();
        let r = rmse(&shifted).unwrap();
        assert!((r.pos_rmse[0] - 0.1).abs() < 1e-12);
        assert!(r.pos_rmse[1].abs() < 1e-12 && r.pos_rmse[2].abs() < 1e-12);
        assert_eq!(rmse(&[]).unwrap_err(), EvalError::Empty);
    }

    #[test]
    fn rmse_matches_two_pass_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt = helix(200, 0.05, 0.0);
        let pairs: Vec<_> = gt
            .samples()
            .iter()
            .map(|(t, g)| {
                let dp = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                let dr = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2));
                PosePair {
                    t: *t,
                    est: Pose::new(g.p + dp, g.q * small_angle_quat(&dr)),
                    gt: *g,
                }
            })
            .collect();
        let r = rmse(&pairs).unwrap();
        // Two-pass: collect squared errors, then average; Euler via nalgebra.
        let mut sq = vec![[0.0f64; 6]; pairs.len()];
        for (i, p) in pairs.iter().enumerate() {
            let d = p.est.p - p.gt.p;
            let (ro, pi, ya) = (p.gt.q.inverse() * p.est.q).euler_angles();
            sq[i] = [d.x * d.x, d.y * d.y, d.z * d.z, ro * ro, pi * pi, ya * ya];
        }
        for c in 0..6 {
            let m = (sq.iter().map(|s| s[c]).sum::<f64>() / pairs.len() as f64).sqrt();
            let got = if c < 3 { r.pos_rmse[c] } else { r.euler_rmse_deg[c - 3].to_radians() };
            assert!((m - got).abs() < 1e-12, "component {c}: {m} vs {got}");
        }
    }

    #[test]
    fn euler_gimbal_lock_is_finite() {
        let r = quat_to_rotmat(&small_angle_quat(&Vec3::new(0.0, FRAC_PI_2, 0.0)));
        let e = euler_zyx(&r);
        assert!(e.iter().all(|x| x.is_finite()));
        assert!((e.y - FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn convergence_cases() {
        let truth = Pose::identity();
        let exact: Vec<_> = (0..10).map(|i| (i as f64, truth)).collect();
        assert_eq!(convergence_time(&exact, &truth, 0.05, 0.03), Some(0.0));

        let step: Vec<_> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.1;
                let p = if t < 5.0 - 1e-9 { Pose::new(Vec3::new(1.0, 0.0, 0.0), truth.q) } else { truth };
                (t, p)
            })
            .collect();
        let c = convergence_time(&step, &truth, 0.05, 0.03).unwrap();
        assert!((c - 5.0).abs() < 1e-9);

        let never: Vec<_> = (0..5).map(|i| (i as f64, Pose::new(Vec3::x(), truth.q))).collect();
        assert_eq!(convergence_time(&never, &truth, 0.05, 0.03), None);
    }
}
