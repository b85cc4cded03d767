//! Measurement logs, TUM trajectories and update reports on disk.
//!
//! A measurement log is line-oriented text. Blank lines and lines starting
//! with `#` are ignored. Records:
//!
//! ```text
//! HEADER version=1 imu_rate=200 cam_rate=30 objects=1,2,3 anchor=1
//! INIT t px py pz vx vy vz qx qy qz qw bwx bwy bwz bax bay baz
//! IMU t wx wy wz ax ay az
//! FRAME t n
//! DET id px py pz qx qy qz qw
//! ```
//!
//! A `FRAME` record is followed by exactly `n` `DET` records. Floats are
//! written in shortest round-trip form so parsing reproduces them exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::IoError;
use crate::eval::Trajectory;
use crate::propagation::ImuSample;
use crate::so3::{Pose, Quat, Vec3};
use crate::state::{CoreState, ObjectId};
use crate::update::{FrameMeasurement, ObjectPoseMeasurement, UpdateReport};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LogHeader {
    pub version: u32,
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub object_ids: Vec<ObjectId>,
    pub anchor_id: ObjectId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementLog {
    pub header: LogHeader,
    /// Optional known initial core state and its time.
    pub initial: Option<(f64, CoreState)>,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<FrameMeasurement>,
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn push_floats(out: &mut String, xs: &[f64]) {
    for x in xs {
        write!(out, " {x}").unwrap();
    }
}

fn quat_coords(q: &Quat) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

impl MeasurementLog {
    pub fn validate(&self) -> Result<(), String> {
        let h = &self.header;
        if !h.object_ids.contains(&h.anchor_id) {
            return Err(format!("anchor {} not among header objects", h.anchor_id));
        }
        if let Some(w) = self.imu.windows(2).find(|w| !(w[1].t > w[0].t)) {
            return Err(format!("IMU timestamps not increasing at t = {}", w[1].t));
        }
        if let Some(w) = self.frames.windows(2).find(|w| !(w[1].t > w[0].t)) {
            return Err(format!("frame timestamps not increasing at t = {}", w[1].t));
        }
        for f in &self.frames {
            if let Some(d) = f.detections.iter().find(|d| !h.object_ids.contains(&d.object_id)) {
                return Err(format!(
                    "frame at t = {} detects object {} missing from the header",
                    f.t, d.object_id
                ));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let h = &self.header;
        let mut out = String::with_capacity(64 * (self.imu.len() + 4 * self.frames.len()));
        let ids: Vec<String> = h.object_ids.iter().map(|i| i.0.to_string()).collect();
        writeln!(
            out,
            "HEADER version={} imu_rate={} cam_rate={} objects={} anchor={}",
            h.version,
            h.imu_rate,
            h.cam_rate,
            ids.join(","),
            h.anchor_id.0
        )
        .unwrap();
        if let Some((t, c)) = &self.initial {
            out.push_str("INIT");
            push_floats(&mut out, &[*t]);
            push_floats(&mut out, c.p_wi.as_slice());
            push_floats(&mut out, c.v_wi.as_slice());
            push_floats(&mut out, &quat_coords(&c.q_wi));
            push_floats(&mut out, c.b_w.as_slice());
            push_floats(&mut out, c.b_a.as_slice());
            out.push('\n');
        }
        for s in &self.imu {
            out.push_str("IMU");
            push_floats(&mut out, &[s.t]);
            push_floats(&mut out, s.w_m.as_slice());
            push_floats(&mut out, s.a_m.as_slice());
            out.push('\n');
        }
        for f in &self.frames {
            out.push_str("FRAME");
            push_floats(&mut out, &[f.t]);
            writeln!(out, " {}", f.detections.len()).unwrap();
            for d in &f.detections {
                write!(out, "DET {}", d.object_id.0).unwrap();
                push_floats(&mut out, d.p_co.as_slice());
                push_floats(&mut out, &quat_coords(&d.q_co));
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = read_text(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses log text; `path` only labels error messages.
    pub fn parse(text: &str, path: &str) -> Result<Self, IoError> {
        let mut header: Option<LogHeader> = None;
        let mut initial = None;
        let mut imu = Vec::new();
        let mut frames: Vec<FrameMeasurement> = Vec::new();
        let mut pending_dets = 0usize;
        let mut record = 0usize;
        let mut last_line = 0usize;

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            last_line = lineno;
            let err = |message: String| IoError::Record {
                path: path.to_string(),
                line: lineno,
                record,
                message,
            };
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();

            if header.is_none() && tag != "HEADER" {
                return Err(err(format!("expected HEADER as first record, found `{tag}`")));
            }
            if pending_dets > 0 && tag != "DET" {
                return Err(err(format!("expected {pending_dets} more DET record(s), found `{tag}`")));
            }
            match tag {
                "HEADER" => {
                    if header.is_some() {
                        return Err(err("duplicate HEADER".into()));
                    }
                    let h = parse_header(&rest).map_err(err)?;
                    if h.version != LOG_VERSION {
                        return Err(IoError::Version {
                            path: path.to_string(),
                            found: h.version,
                            expected: LOG_VERSION,
                        });
                    }
                    header = Some(h);
                }
                "INIT" => {
                    let v = floats(&rest, 17).map_err(err)?;
                    let core = CoreState {
                        p_wi: Vec3::new(v[1], v[2], v[3]),
                        v_wi: Vec3::new(v[4], v[5], v[6]),
                        q_wi: parse_quat(&v[7..11]).map_err(err)?,
                        b_w: Vec3::new(v[11], v[12], v[13]),
                        b_a: Vec3::new(v[14], v[15], v[16]),
                    };
                    initial = Some((v[0], core));
                }
                "IMU" => {
                    let v = floats(&rest, 7).map_err(err)?;
                    let s = ImuSample::new(v[0], Vec3::new(v[1], v[2], v[3]), Vec3::new(v[4], v[5], v[6]));
                    if let Some(prev) = imu.last() {
                        let prev: &ImuSample = prev;
                        if !(s.t > prev.t) {
                            return Err(err(format!("IMU time {} does not follow {}", s.t, prev.t)));
                        }
                    }
                    imu.push(s);
                }
                "FRAME" => {
                    if rest.len() != 2 {
                        return Err(err(format!("FRAME expects 2 fields, found {}", rest.len())));
                    }
                    let t = parse_f64(rest[0]).map_err(err)?;
                    let n: usize = rest[1]
                        .parse()
                        .map_err(|_| err(format!("invalid detection count `{}`", rest[1])))?;
                    if let Some(prev) = frames.last() {
                        if !(t > prev.t) {
                            return Err(err(format!("frame time {t} does not follow {}", prev.t)));
                        }
                    }
                    frames.push(FrameMeasurement {
                        t,
                        detections: Vec::with_capacity(n),
                    });
                    pending_dets = n;
                }
                "DET" => {
                    if pending_dets == 0 {
                        return Err(err("DET outside a FRAME".into()));
                    }
                    if rest.len() != 8 {
                        return Err(err(format!("DET expects 8 fields, found {}", rest.len())));
                    }
                    let id: u32 = rest[0]
                        .parse()
                        .map_err(|_| err(format!("invalid object id `{}`", rest[0])))?;
                    let id = ObjectId(id);
                    let h = header.as_ref().unwrap();
                    if !h.object_ids.contains(&id) {
                        return Err(err(format!("object {id} missing from the header")));
                    }
                    let v = floats(&rest[1..], 7).map_err(err)?;
                    let frame = frames.last_mut().unwrap();
                    frame.detections.push(ObjectPoseMeasurement {
                        t: frame.t,
                        object_id: id,
                        p_co: Vec3::new(v[0], v[1], v[2]),
                        q_co: parse_quat(&v[3..7]).map_err(err)?,
                    });
                    pending_dets -= 1;
                }
                other => return Err(err(format!("unknown record tag `{other}`"))),
            }
            record += 1;
        }
        if pending_dets > 0 {
            return Err(IoError::Record {
                path: path.to_string(),
                line: last_line,
                record,
                message: format!("log ends with {pending_dets} missing DET record(s)"),
            });
        }
        let header = header.ok_or_else(|| IoError::Format {
            path: path.to_string(),
            message: "missing HEADER".into(),
        })?;
        Ok(Self {
            header,
            initial,
            imu,
            frames,
        })
    }
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("invalid number `{s}`"))?;
    if !x.is_finite() {
        return Err(format!("non-finite number `{s}`"));
    }
    Ok(x)
}

fn floats(fields: &[&str], n: usize) -> Result<Vec<f64>, String> {
    if fields.len() != n {
        return Err(format!("expected {n} numeric fields, found {}", fields.len()));
    }
    fields.iter().map(|s| parse_f64(s)).collect()
}

/// Accepts `(x, y, z, w)`; renormalizes only when visibly off the unit sphere.
fn parse_quat(c: &[f64]) -> Result<Quat, String> {
    let q = Quaternion::new(c[3], c[0], c[1], c[2]);
    let n = q.norm();
    if !(n > 1e-6) {
        return Err("zero quaternion".into());
    }
    if (n - 1.0).abs() < 1e-12 {
        Ok(UnitQuaternion::new_unchecked(q))
    } else {
        Ok(UnitQuaternion::new_normalize(q))
    }
}

fn parse_header(fields: &[&str]) -> Result<LogHeader, String> {
    let mut version = None;
    let mut imu_rate = None;
    let mut cam_rate = None;
    let mut objects = None;
    let mut anchor = None;
    for f in fields {
        let (k, v) = f
            .split_once('=')
            .ok_or_else(|| format!("header field `{f}` is not key=value"))?;
        match k {
            "version" => version = Some(v.parse::<u32>().map_err(|_| format!("invalid version `{v}`"))?),
            "imu_rate" => imu_rate = Some(parse_f64(v)?),
            "cam_rate" => cam_rate = Some(parse_f64(v)?),
            "objects" => {
                objects = Some(
                    v.split(',')
                        .map(|s| s.parse::<u32>().map(ObjectId).map_err(|_| format!("invalid object id `{s}`")))
                        .collect::<Result<Vec<_>, _>>()?,
                )
            }
            "anchor" => anchor = Some(ObjectId(v.parse().map_err(|_| format!("invalid anchor `{v}`"))?)),
            _ => return Err(format!("unknown header field `{k}`")),
        }
    }
    let missing = |k: &str| format!("header lacks `{k}`");
    let h = LogHeader {
        version: version.ok_or_else(|| missing("version"))?,
        imu_rate: imu_rate.ok_or_else(|| missing("imu_rate"))?,
        cam_rate: cam_rate.ok_or_else(|| missing("cam_rate"))?,
        object_ids: objects.ok_or_else(|| missing("objects"))?,
        anchor_id: anchor.ok_or_else(|| missing("anchor"))?,
    };
    if !(h.imu_rate > 0.0 && h.cam_rate > 0.0) {
        return Err("rates must be positive".into());
    }
    if !h.object_ids.contains(&h.anchor_id) {
        return Err(format!("anchor {} not among header objects", h.anchor_id));
    }
    Ok(h)
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-5..9).contains(&exp) {
        let s = format!("{x:.8e}");
        let (mant, e) = s.split_once('e').unwrap();
        format!("{}e{}", trim(mant.to_string()), e)
    } else {
        let decimals = (8 - exp).max(0) as usize;
        let s = trim(format!("{x:.decimals$}"));
        if s == "-0" { "0".into() } else { s }
    }
}

/// TUM lines: `t tx ty tz qx qy qz qw`.
pub fn tum_to_text(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.len() * 96);
    for (t, p) in traj.samples() {
        let c = quat_coords(&p.q);
        let vals = [*t, p.p.x, p.p.y, p.p.z, c[0], c[1], c[2], c[3]];
        let line: Vec<String> = vals.iter().map(|v| fmt_sig9(*v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_tum(path: &Path, traj: &Trajectory) -> Result<(), IoError> {
    write_atomic(path, tum_to_text(traj).as_bytes())
}

pub fn parse_tum(text: &str, path: &str) -> Result<Trajectory, IoError> {
    let mut samples = Vec::new();
    let mut record = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| IoError::Record {
            path: path.to_string(),
            line: idx + 1,
            record,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let v = floats(&fields, 8).map_err(err)?;
        let q = parse_quat(&v[4..8]).map_err(err)?;
        if let Some((prev, _)) = samples.last() {
            if !(v[0] > *prev) {
                return Err(err(format!("timestamp {} does not follow {prev}", v[0])));
            }
        }
        samples.push((v[0], Pose::new(Vec3::new(v[1], v[2], v[3]), q)));
        record += 1;
    }
    Ok(Trajectory::new(samples))
}

pub fn read_tum(path: &Path) -> Result<Trajectory, IoError> {
    let text = read_text(path)?;
    parse_tum(&text, &path.display().to_string())
}

/// One JSON object per frame.
pub fn reports_to_jsonl(reports: &[UpdateReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_reports_jsonl(text: &str) -> Result<Vec<UpdateReport>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::small_angle_quat;
    use proptest::prelude::*;

    fn sample_log() -> MeasurementLog {
        let q = small_angle_quat(&Vec3::new(0.1, -0.2, 0.3));
        MeasurementLog {
            header: LogHeader {
                version: LOG_VERSION,
                imu_rate: 200.0,
                cam_rate: 30.0,
                object_ids: vec![ObjectId(1), ObjectId(2), ObjectId(3)],
                anchor_id: ObjectId(1),
            },
            initial: Some((
                0.0,
                CoreState {
                    p_wi: Vec3::new(1.5, 0.0, 1.0),
                    v_wi: Vec3::new(0.0, 0.3, 0.0),
                    q_wi: q,
                    b_w: Vec3::zeros(),
                    b_a: Vec3::zeros(),
                },
            )),
            imu: (0..5)
                .map(|i| ImuSample::new(i as f64 / 200.0, Vec3::new(0.1, 1e-17, -3.3), Vec3::new(0.0, 0.1 / 3.0, 9.81)))
                .collect(),
            frames: vec![FrameMeasurement {
                t: 1.0 / 30.0,
                detections: vec![
                    ObjectPoseMeasurement {
                        t: 1.0 / 30.0,
                        object_id: ObjectId(1),
                        p_co: Vec3::new(0.1, 0.2, 1.4),
                        q_co: q,
                    },
                    ObjectPoseMeasurement {
                        t: 1.0 / 30.0,
                        object_id: ObjectId(3),
                        p_co: Vec3::new(-0.3, 0.0, 1.1),
                        q_co: q.inverse(),
                    },
                ],
            }],
        }
    }

    #[test]
    fn log_round_trip_exact() {
        let log = sample_log();
        let text = log.to_text();
        let back = MeasurementLog::parse(&text, "mem").unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let text = sample_log().to_text().replacen("version=1", "version=7", 1);
        match MeasurementLog::parse(&text, "mem") {
            Err(IoError::Version { found: 7, expected: LOG_VERSION, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupted_record_reports_index() {
        let mut lines: Vec<String> = sample_log().to_text().lines().map(String::from).collect();
        lines[4] = "IMU 0.015 1 2 x 4 5 6".into();
        let text = lines.join("\n");
        match MeasurementLog::parse(&text, "mem") {
            Err(IoError::Record { line: 5, record: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let base = sample_log().to_text();
        let unknown = base.replacen("DET 3", "DET 9", 1);
        assert!(MeasurementLog::parse(&unknown, "mem").is_err());
        let truncated: String = base.lines().take(base.lines().count() - 1).collect::<Vec<_>>().join("\n");
        assert!(MeasurementLog::parse(&truncated, "mem").is_err());
        assert!(MeasurementLog::parse("IMU 0 0 0 0 0 0 0\n", "mem").is_err());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(-12.5), "-12.5");
        assert_eq!(fmt_sig9(59.995), "59.995");
        assert_eq!(fmt_sig9(123456789.4), "123456789");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig9(-1e-12), "-1e-12");
    }

    #[test]
    fn tum_round_trip_to_nine_digits() {
        let traj = Trajectory::new(
            (0..10)
                .map(|i| {
                    let t = i as f64 / 30.0;
                    (t, Pose::new(Vec3::new(t.sin(), 2.0 * t, -t), small_angle_quat(&Vec3::new(t, 0.2, -0.1))))
                })
                .collect(),
        );
        let back = parse_tum(&tum_to_text(&traj), "mem").unwrap();
        assert_eq!(back.len(), traj.len());
        for ((ta, pa), (tb, pb)) in traj.samples().iter().zip(back.samples()) {
            assert!((ta - tb).abs() <= 1e-8 * ta.abs().max(1e-9));
            assert!((pa.p - pb.p).amax() < 1e-8);
            assert!(pa.q.angle_to(&pb.q) < 1e-8);
        }
    }

    #[test]
    fn reports_round_trip() {
        let r = UpdateReport {
            t: 0.5,
            applied: false,
            skip_reason: Some(crate::update::SkipReason::AnchorNotVisible),
            detections: vec![],
        };
        let text = reports_to_jsonl(&[r.clone(), r.clone()]);
        assert_eq!(parse_reports_jsonl(&text).unwrap(), vec![r.clone(), r]);
        assert!(text.contains("anchor_not_visible"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn floats_round_trip(t in 0.0f64..1e4, w in prop::array::uniform3(-1e3f64..1e3), a in prop::array::uniform3(-1e-300f64..1e-300)) {
            let mut log = sample_log();
            log.imu = vec![ImuSample::new(t, Vec3::from(w), Vec3::from(a))];
            let back = MeasurementLog::parse(&log.to_text(), "mem").unwrap();
            prop_assert_eq!(back, log);
        }
    }
}
