//! Observation model and the clamped waypoint tracker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{EgoState, Observation, ObstacleView, SignalView};
use crate::sim::expert::heading_of;
use crate::sim::scenario::{Scenario, TrackerLimits};

/// Lookahead distances at which the lane centreline is sampled, metres.
pub const LANE_LOOKAHEAD: [f64; 4] = [0.0, 10.0, 20.0, 40.0];

/// Snapshot of the world at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: usize,
    pub ego: EgoState,
    pub active_obstacles: Vec<ObstacleView>,
    pub signal: Option<SignalView>,
}

impl WorldState {
    pub fn at(scenario: &Scenario, states: &[EgoState], step: usize) -> Self {
        let obs = observe(states, step, scenario, 1);
        Self {
            step,
            ego: states[step],
            active_obstacles: obs.visible_obstacles,
            signal: obs.signal,
        }
    }
}

/// State `k` steps before `states[0]`, extrapolated at constant velocity.
fn pre_episode(first: &EgoState, k: usize, dt: f64) -> EgoState {
    let back = k as f64 * dt;
    EgoState {
        x: first.x - first.vx * back,
        y: first.y - first.vy * back,
        ..*first
    }
}

/// What the planner sees at `step`: only events already triggered.
pub fn observe(states: &[EgoState], step: usize, scenario: &Scenario, history: usize) -> Observation {
    let dt = scenario.world.dt;
    let ego_history = (0..history)
        .rev()
        .map(|back| match step.checked_sub(back) {
            Some(i) => states[i],
            None => pre_episode(&states[0], back - step, dt),
        })
        .collect::<Vec<_>>();
    let visible_obstacles = scenario
        .obstacles()
        .filter(|(trigger, _, _)| *trigger <= step)
        .map(|(trigger, center, radius)| ObstacleView {
            center,
            radius,
            first_visible_step: trigger,
        })
        .collect();
    let signal = scenario
        .signal_at(step)
        .map(|(stop_x, state)| SignalView { state, stop_x });
    let cur = states[step];
    let lane = LANE_LOOKAHEAD.iter().map(|d| [cur.x + d, 0.0]).collect();
    Observation {
        ego_history,
        visible_obstacles,
        signal,
        lane,
        lane_half_width: scenario.lane.half_width,
        current_step: step,
    }
}

/// Tracker output for one executed plan segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub states: Vec<EgoState>,
    /// Distance between each executed state and its target waypoint.
    pub deviations: Vec<f64>,
}

/// Follows the first `steps` world-frame target positions. Longitudinal
/// acceleration is clamped to `±a_max`, lateral rate to `±lat_rate_max`,
/// and the ego never reverses.
pub fn execute_plan(
    start: &EgoState,
    targets: &[[f64; 2]],
    steps: usize,
    limits: &TrackerLimits,
    dt: f64,
) -> Result<Execution> {
    if targets.len() < steps {
        return Err(Error::Parameter(format!(
            "plan has {} waypoints, {steps} requested",
            targets.len()
        )));
    }
    let mut cur = *start;
    let mut states = Vec::with_capacity(steps);
    let mut deviations = Vec::with_capacity(steps);
    for target in &targets[..steps] {
        let v_des = (target[0] - cur.x) / dt;
        let accel = ((v_des - cur.vx) / dt).clamp(-limits.a_max, limits.a_max);
        let vx = (cur.vx + accel * dt).max(0.0);
        let vy = ((target[1] - cur.y) / dt).clamp(-limits.lat_rate_max, limits.lat_rate_max);
        let next = EgoState {
            x: cur.x + vx * dt,
            y: cur.y + vy * dt,
            vx,
            vy,
            heading: heading_of(vx, vy, cur.heading),
        };
        deviations.push((next.x - target[0]).hypot(next.y - target[1]));
        states.push(next);
        cur = next;
    }
    Ok(Execution { states, deviations })
}
