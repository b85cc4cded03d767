//! Event-driven filter: IMU samples propagate, camera frames update.

use crate::error::{ConfigError, FilterError};
use crate::propagation::{propagate_span, ImuSample};
use crate::state::{new_filter, new_filter_at, CoreState, ErrorCovariance, FilterConfig, FilterState};
use crate::update::{apply_frame, FrameMeasurement, UpdateReport};

/// Timestamps closer than this are treated as simultaneous.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Filter {
    pub config: FilterConfig,
    pub state: FilterState,
    pub cov: ErrorCovariance,
    last_imu: Option<ImuSample>,
}

impl Filter {
    pub fn new(config: FilterConfig) -> Result<Self, ConfigError> {
        let (state, cov) = new_filter(&config)?;
        Ok(Self::from_parts(config, state, cov))
    }

    /// Starts from a known core state at time `t`.
    pub fn with_initial_state(
        config: FilterConfig,
        core: CoreState,
        t: f64,
    ) -> Result<Self, ConfigError> {
        let (state, cov) = new_filter_at(&config, core, t)?;
        Ok(Self::from_parts(config, state, cov))
    }

    pub fn from_parts(config: FilterConfig, state: FilterState, cov: ErrorCovariance) -> Self {
        Self {
            config,
            state,
            cov,
            last_imu: None,
        }
    }

    pub fn time(&self) -> f64 {
        self.state.timestamp
    }

    /// Integrates up to `t` holding the most recent IMU sample.
    ///
    /// Before the first sample arrives the clock simply advances.
    pub fn propagate_to(&mut self, t: f64) -> Result<(), FilterError> {
        let dt = t - self.state.timestamp;
        if dt < -TIME_EPS {
            return Err(FilterError::OutOfOrder {
                t,
                now: self.state.timestamp,
            });
        }
        if dt > TIME_EPS {
            if let Some(sample) = self.last_imu {
                propagate_span(
                    &mut self.state,
                    &mut self.cov,
                    &sample,
                    dt,
                    &self.config.imu_noise,
                )?;
            }
        }
        self.state.timestamp = t.max(self.state.timestamp);
        Ok(())
    }

    pub fn process_imu(&mut self, sample: &ImuSample) -> Result<(), FilterError> {
        if !sample.is_finite() {
            return Err(FilterError::NonFiniteSample(sample.t));
        }
        self.propagate_to(sample.t)?;
        self.last_imu = Some(*sample);
        Ok(())
    }

    pub fn process_frame(&mut self, frame: &FrameMeasurement) -> Result<UpdateReport, FilterError> {
        self.propagate_to(frame.t)?;
        Ok(apply_frame(
            &mut self.state,
            &mut self.cov,
            frame,
            &self.config,
        ))
    }
}
