//! Analytic ground-truth trajectories for the IMU body.
//!
//! Every trajectory supplies position, velocity and acceleration in closed
//! form together with attitude and body angular rate, so the synthesized
//! IMU stream is exact up to injected noise.

use std::f64::consts::TAU;

use crate::error::ConfigError;
use crate::so3::{Pose, Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Horizontal circle of `radius` around `center`.
    Circle,
    /// Figure-eight of size `scale` in a vertical plane `radius` in front of `center`.
    Lemniscate,
    /// Closed periodic cubic B-spline through `waypoints` (offsets from `center`).
    WaypointSpline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YawMode {
    /// Body x-axis points horizontally at `center`.
    FaceCenter,
    /// Constant yaw, rad.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub center: Vec3,
    pub radius: f64,
    pub scale: f64,
    /// Loop rate, rad/s (one loop every `2π / angular_rate` seconds).
    pub angular_rate: f64,
    pub yaw_mode: YawMode,
    pub duration: f64,
    /// Amplitude of a vertical bob at twice the loop rate, m.
    pub vertical_amplitude: f64,
    /// Roll/pitch wobble amplitude, rad.
    pub tilt_amplitude: f64,
    pub waypoints: Vec<Vec3>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Circle,
            center: Vec3::new(0.0, 0.0, 1.0),
            radius: 1.5,
            scale: 0.5,
            angular_rate: 0.2,
            yaw_mode: YawMode::FaceCenter,
            duration: 60.0,
            vertical_amplitude: 0.2,
            tilt_amplitude: 5f64.to_radians(),
            waypoints: Vec::new(),
        }
    }
}

/// Kinematic ground truth at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample {
    pub p: Vec3,
    pub v: Vec3,
    /// World-frame acceleration.
    pub a: Vec3,
    pub q: Quat,
    /// Body-frame angular rate.
    pub omega: Vec3,
}

impl KinematicSample {
    pub fn pose(&self) -> Pose {
        Pose::new(self.p, self.q)
    }
}

const ROLL_FREQ: f64 = 0.9;
const PITCH_FREQ: f64 = 0.7;
const PITCH_PHASE: f64 = 0.7;

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("trajectory.duration", self.duration),
            ("trajectory.radius", self.radius),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError::NonPositive { name, value });
            }
        }
        if !self.angular_rate.is_finite() {
            return Err(ConfigError::Invalid {
                name: "trajectory.angular_rate",
                reason: "must be finite".into(),
            });
        }
        if self.kind == TrajectoryKind::Lemniscate && !(self.scale > 0.0) {
            return Err(ConfigError::NonPositive {
                name: "trajectory.scale",
                value: self.scale,
            });
        }
        if self.kind == TrajectoryKind::WaypointSpline {
            if self.waypoints.len() < 4 {
                return Err(ConfigError::Invalid {
                    name: "trajectory.waypoints",
                    reason: format!("need at least 4 waypoints, got {}", self.waypoints.len()),
                });
            }
            if self.yaw_mode == YawMode::FaceCenter
                && self.waypoints.iter().any(|w| w.xy().norm() < 1e-3)
            {
                return Err(ConfigError::Invalid {
                    name: "trajectory.waypoints",
                    reason: "face-center yaw needs waypoints away from the center axis".into(),
                });
            }
        }
        if self.tilt_amplitude.abs() >= 1.0 {
            return Err(ConfigError::Invalid {
                name: "trajectory.tilt_amplitude",
                reason: "must be below 1 rad".into(),
            });
        }
        Ok(())
    }

    /// Position, velocity and acceleration of the path.
    fn path(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let w = self.angular_rate;
        let phi = w * t;
        let (mut p, mut v, mut a) = match self.kind {
            TrajectoryKind::Circle => {
                let r = self.radius;
                let (s, c) = phi.sin_cos();
                (
                    Vec3::new(r * c, r * s, 0.0),
                    Vec3::new(-r * w * s, r * w * c, 0.0),
                    Vec3::new(-r * w * w * c, -r * w * w * s, 0.0),
                )
            }
            TrajectoryKind::Lemniscate => {
                let s = self.scale;
                let (s1, c1) = phi.sin_cos();
                let (s2, c2) = (2.0 * phi).sin_cos();
                (
                    Vec3::new(-self.radius, s * s1, 0.5 * s * s2),
                    Vec3::new(0.0, s * w * c1, s * w * c2),
                    Vec3::new(0.0, -s * w * w * s1, -2.0 * s * w * w * s2),
                )
            }
            TrajectoryKind::WaypointSpline => self.spline(phi),
        };
        p += self.center;
        let h = self.vertical_amplitude;
        let wv = 2.0 * w;
        let (sv, cv) = (wv * t).sin_cos();
        p.z += h * sv;
        v.z += h * wv * cv;
        a.z -= h * wv * wv * sv;
        (p, v, a)
    }

    /// Uniform periodic cubic B-spline; one loop per `2π` of `phi`.
    fn spline(&self, phi: f64) -> (Vec3, Vec3, Vec3) {
        let n = self.waypoints.len();
        let u = phi / TAU * n as f64;
        let du = self.angular_rate / TAU * n as f64;
        let seg = u.floor();
        let s = u - seg;
        let i = seg as i64;
        let cp = |j: i64| self.waypoints[j.rem_euclid(n as i64) as usize];
        let (p0, p1, p2, p3) = (cp(i - 1), cp(i), cp(i + 1), cp(i + 2));
        let s2 = s * s;
        let s3 = s2 * s;
        let b = [
            (1.0 - s).powi(3) / 6.0,
            (3.0 * s3 - 6.0 * s2 + 4.0) / 6.0,
            (-3.0 * s3 + 3.0 * s2 + 3.0 * s + 1.0) / 6.0,
            s3 / 6.0,
        ];
        let db = [
            -(1.0 - s).powi(2) / 2.0,
            (3.0 * s2 - 4.0 * s) / 2.0,
            (-3.0 * s2 + 2.0 * s + 1.0) / 2.0,
            s2 / 2.0,
        ];
        let ddb = [1.0 - s, 3.0 * s - 2.0, -3.0 * s + 1.0, s];
        let comb = |w: [f64; 4]| p0 * w[0] + p1 * w[1] + p2 * w[2] + p3 * w[3];
        (comb(b), comb(db) * du, comb(ddb) * du * du)
    }

    pub fn sample(&self, t: f64) -> KinematicSample {
        let (p, v, a) = self.path(t);
        let (yaw, yaw_rate) = match self.yaw_mode {
            YawMode::Fixed(y) => (y, 0.0),
            YawMode::FaceCenter => {
                let d = self.center - p;
                let dd = -v;
                let den = d.x * d.x + d.y * d.y;
                (d.y.atan2(d.x), (d.x * dd.y - d.y * dd.x) / den)
            }
        };
        let amp = self.tilt_amplitude;
        let roll = amp * (ROLL_FREQ * t).sin();
        let roll_rate = amp * ROLL_FREQ * (ROLL_FREQ * t).cos();
        let pitch = amp * (PITCH_FREQ * t + PITCH_PHASE).sin();
        let pitch_rate = amp * PITCH_FREQ * (PITCH_FREQ * t + PITCH_PHASE).cos();

        let q = Quat::from_euler_angles(roll, pitch, yaw);
        // Body rates of a z-y-x Euler sequence.
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let omega = Vec3::new(
            roll_rate - yaw_rate * sp,
            pitch_rate * cr + yaw_rate * cp * sr,
            -pitch_rate * sr + yaw_rate * cp * cr,
        );
        KinematicSample { p, v, a, q, omega }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{quat_to_rotvec, Mat3};

    fn specs() -> Vec<TrajectorySpec> {
        let base = TrajectorySpec::default();
        vec![
            base.clone(),
            TrajectorySpec {
                kind: TrajectoryKind::Lemniscate,
                scale: 0.6,
                ..base.clone()
            },
            TrajectorySpec {
                kind: TrajectoryKind::WaypointSpline,
                waypoints: vec![
                    Vec3::new(1.5, 0.0, 0.0),
                    Vec3::new(0.3, 1.4, 0.2),
                    Vec3::new(-1.6, 0.2, -0.1),
                    Vec3::new(-0.2, -1.3, 0.1),
                    Vec3::new(1.0, -1.0, 0.0),
                ],
                ..base.clone()
            },
            TrajectorySpec {
                yaw_mode: YawMode::Fixed(0.3),
                ..base
            },
        ]
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for spec in specs() {
            for &t in &[0.3, 4.1, 17.7, 33.3] {
                let s = spec.sample(t);
                let sp = spec.sample(t + h);
                let sm = spec.sample(t - h);
                let v_fd = (sp.p - sm.p) / (2.0 * h);
                let a_fd = (sp.v - sm.v) / (2.0 * h);
                assert!((v_fd - s.v).amax() < 1e-6, "{:?} velocity", spec.kind);
                assert!((a_fd - s.a).amax() < 1e-6, "{:?} acceleration", spec.kind);
                // Body rate: R(t)ᵀ Ṙ(t) ≈ log(R(t-h)ᵀ R(t+h)) / 2h
                let dq = sm.q.inverse() * sp.q;
                let w_fd = quat_to_rotvec(&dq) / (2.0 * h);
                assert!((w_fd - s.omega).amax() < 1e-6, "{:?} omega", spec.kind);
            }
        }
    }

    #[test]
    fn face_center_points_body_x_at_center() {
        let spec = TrajectorySpec {
            tilt_amplitude: 0.0,
            ..TrajectorySpec::default()
        };
        let s = spec.sample(7.0);
        let x_axis: Vec3 = s.q.to_rotation_matrix().matrix() * Vec3::x();
        let to_center = (spec.center - s.p).xy().normalize();
        assert!((x_axis.xy() - to_center).amax() < 1e-12);
        let _ = Mat3::identity();
    }

    #[test]
    fn spline_is_periodic() {
        let spec = &specs()[2];
        let period = TAU / spec.angular_rate;
        let a = spec.sample(1.0);
        let b = spec.sample(1.0 + period);
        assert!((a.p - b.p).amax() < 1e-9);
    }

    #[test]
    fn validation() {
        let mut s = TrajectorySpec::default();
        s.duration = 0.0;
        assert!(s.validate().is_err());
        let mut s = TrajectorySpec::default();
        s.kind = TrajectoryKind::WaypointSpline;
        assert!(s.validate().is_err());
    }
}
