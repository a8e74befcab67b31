//! What the planner is allowed to see, plus the planning-shape configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::DEFAULT_DT;

/// Kinematic ego state in the world (lane-aligned) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
}

impl EgoState {
    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalState {
    Green,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleView {
    pub center: [f64; 2],
    pub radius: f64,
    pub first_visible_step: usize,
}

/// The currently displayed signal and the longitudinal position of its stop line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalView {
    pub state: SignalState,
    pub stop_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Oldest first; the last entry is the current state.
    pub ego_history: Vec<EgoState>,
    pub visible_obstacles: Vec<ObstacleView>,
    /// `None` until a signal has been switched for the first time.
    pub signal: Option<SignalView>,
    /// Sampled lane centreline ahead of the ego, world frame.
    pub lane: Vec<[f64; 2]>,
    pub lane_half_width: f64,
    pub current_step: usize,
}

impl Observation {
    pub fn current(&self) -> &EgoState {
        self.ego_history
            .last()
            .expect("observation carries at least one ego state")
    }

    pub fn validate(&self) -> Result<()> {
        if self.ego_history.is_empty() {
            return Err(Error::Data("observation has no ego history".into()));
        }
        if let Some(o) = self
            .visible_obstacles
            .iter()
            .find(|o| o.first_visible_step > self.current_step)
        {
            return Err(Error::Data(format!(
                "obstacle visible from step {} leaked into step {}",
                o.first_visible_step, self.current_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub future_steps: usize,
    pub history_steps: usize,
    pub mode_count: usize,
    pub wavelet_levels: usize,
    /// Decision-scope horizon in base timesteps.
    pub ds_horizon: usize,
    pub dt: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            future_steps: 80,
            history_steps: 21,
            mode_count: 3,
            wavelet_levels: 3,
            ds_horizon: 20,
            dt: DEFAULT_DT,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.future_steps == 0 {
            return Err(Error::Config("future_steps must be positive".into()));
        }
        let divisor = 1usize
            .checked_shl(self.wavelet_levels as u32)
            .ok_or_else(|| Error::Config("wavelet_levels too large".into()))?;
        if self.future_steps % divisor != 0 {
            return Err(Error::Config(format!(
                "future_steps {} must be divisible by 2^{} = {divisor}",
                self.future_steps, self.wavelet_levels
            )));
        }
        if self.mode_count == 0 {
            return Err(Error::Config("mode_count must be at least 1".into()));
        }
        if self.history_steps == 0 {
            return Err(Error::Config("history_steps must be at least 1".into()));
        }
        if self.ds_horizon == 0 || self.ds_horizon > self.future_steps {
            return Err(Error::Config(format!(
                "ds_horizon must lie in 1..={}, got {}",
                self.future_steps, self.ds_horizon
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        Ok(())
    }
}
