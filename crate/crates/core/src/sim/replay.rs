use crate::error::SimError;
use crate::eval::Trajectory;
use crate::filter::Filter;
use crate::log::MeasurementLog;
use crate::propagation::ImuSample;
use crate::so3::Pose;
use crate::state::{object_p, OBJECT_DIM};
use crate::update::{FrameMeasurement, UpdateReport};

/// Object-world estimates right after one frame update.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSnapshot {
    pub t: f64,
    /// Per slot: `T_OkW` if initialized.
    pub poses: Vec<Option<Pose>>,
    /// Per slot: trace of the position block and of the rotation block.
    pub traces: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub trajectory: Trajectory,
    pub reports: Vec<UpdateReport>,
    pub objects: Vec<ObjectSnapshot>,
}

fn check_sorted<T>(items: &[T], time: impl Fn(&T) -> f64, what: &str) -> Result<(), SimError> {
    if let Some(i) = items.windows(2).position(|w| !(time(&w[1]) > time(&w[0]))) {
        return Err(SimError::Unsorted(format!(
            "{what} record {} at t = {} does not follow t = {}",
            i + 1,
            time(&items[i + 1]),
            time(&items[i])
        )));
    }
    Ok(())
}

/// Feeds IMU samples and frames to the filter in timestamp order.
///
/// Propagation happens on every IMU sample, a correction on every frame. At
/// equal timestamps the IMU sample is consumed first. The IMU pose estimate
/// is recorded after each distinct event time.
pub fn replay(
    imu: &[ImuSample],
    frames: &[FrameMeasurement],
    filter: &mut Filter,
) -> Result<ReplayOutput, SimError> {
    check_sorted(imu, |s| s.t, "IMU")?;
    check_sorted(frames, |f| f.t, "frame")?;

    let mut poses: Vec<(f64, Pose)> = Vec::with_capacity(imu.len() + frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    let mut objects = Vec::with_capacity(frames.len());
    let mut record = |t: f64, pose: Pose| match poses.last_mut() {
        Some(last) if last.0 == t => last.1 = pose,
        _ => poses.push((t, pose)),
    };

    let (mut i, mut j) = (0, 0);
    while i < imu.len() || j < frames.len() {
        let take_imu = match (imu.get(i), frames.get(j)) {
            (Some(s), Some(f)) => s.t <= f.t,
            (Some(_), None) => true,
            _ => false,
        };
        if take_imu {
            filter.process_imu(&imu[i])?;
            i += 1;
        } else {
            let report = filter.process_frame(&frames[j])?;
            reports.push(report);
            objects.push(snapshot(filter));
            j += 1;
        }
        record(filter.time(), filter.state.core.pose());
    }

    Ok(ReplayOutput {
        trajectory: Trajectory::new(poses),
        reports,
        objects,
    })
}

pub fn replay_log(log: &MeasurementLog, filter: &mut Filter) -> Result<ReplayOutput, SimError> {
    replay(&log.imu, &log.frames, filter)
}

fn snapshot(filter: &Filter) -> ObjectSnapshot {
    let s = &filter.state;
    let poses = s
        .objects
        .iter()
        .map(|o| o.initialized.then(|| o.pose()))
        .collect();
    let traces = (0..s.objects.len())
        .map(|k| {
            let start = object_p(k);
            (
                filter.cov.block_trace(start, OBJECT_DIM / 2),
                filter.cov.block_trace(start + 3, OBJECT_DIM / 2),
            )
        })
        .collect();
    ObjectSnapshot {
        t: s.timestamp,
        poses,
        traces,
    }
}
