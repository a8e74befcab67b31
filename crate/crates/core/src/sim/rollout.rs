use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::observation::{EgoState, Observation};
use crate::sim::scenario::Scenario;
use crate::sim::world::{execute_plan, observe};
use crate::trajectory::Trajectory;

/// Anything that maps an observation to a plan in the ego-centred,
/// lane-aligned frame (positions relative to the current ego position).
pub trait Planner: Sync {
    fn plan(&self, scenario: &Scenario, obs: &Observation) -> Result<Trajectory>;
}

/// A plan issued during closed-loop simulation, world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub step: usize,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activation {
    pub step: usize,
    pub event_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario: Scenario,
    /// One executed ego state per step, `states[0]` is the initial state.
    pub states: Vec<EgoState>,
    pub plans: Vec<PlanRecord>,
    pub activations: Vec<Activation>,
    /// Tracking deviation per executed step (closed loop only).
    pub deviations: Vec<f64>,
    /// Set when the rollout was aborted; the log is then truncated.
    pub failure: Option<String>,
}

impl EpisodeLog {
    pub fn new(scenario: Scenario, states: Vec<EgoState>) -> Self {
        let last = states.len().saturating_sub(1);
        let activations = scenario
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.trigger_step <= last)
            .map(|(event_index, e)| Activation {
                step: e.trigger_step,
                event_index,
            })
            .collect();
        Self {
            scenario,
            states,
            plans: Vec::new(),
            activations,
            deviations: Vec::new(),
            failure: None,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.states.len() == self.scenario.episode_steps
    }

    pub fn observation(&self, step: usize, history: usize) -> Observation {
        observe(&self.states, step, &self.scenario, history)
    }
}

/// Closed-loop settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    /// Steps executed from each plan before replanning.
    pub replan_interval: usize,
    pub history_steps: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            replan_interval: 10,
            history_steps: 21,
        }
    }
}

pub fn initial_state(scenario: &Scenario) -> EgoState {
    EgoState {
        x: 0.0,
        y: 0.0,
        vx: scenario.v_ref,
        vy: 0.0,
        heading: 0.0,
    }
}

/// observe → plan → execute `replan_interval` steps, until the episode ends.
/// A planner error or non-finite plan ends the episode early with `failure` set.
pub fn closed_loop_rollout(
    planner: &dyn Planner,
    scenario: &Scenario,
    config: &RolloutConfig,
) -> EpisodeLog {
    let total = scenario.episode_steps;
    let interval = config.replan_interval.max(1);
    let mut states = vec![initial_state(scenario)];
    let mut plans = Vec::new();
    let mut deviations = vec![0.0];
    let mut failure = None;
    while states.len() < total {
        let step = states.len() - 1;
        let obs = observe(&states, step, scenario, config.history_steps);
        let current = states[step];
        let plan = match planner.plan(scenario, &obs) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(format!("planner failed at step {step}: {e}"));
                break;
            }
        };
        if let Some(bad) = plan
            .points
            .iter()
            .position(|p| p.channels().iter().any(|v| !v.is_finite()))
        {
            failure = Some(format!(
                "non-finite plan at step {step}, waypoint {bad}"
            ));
            break;
        }
        let steps = interval.min(total - states.len());
        let targets: Vec<[f64; 2]> = plan
            .points
            .iter()
            .map(|p| [current.x + p.px, current.y + p.py])
            .collect();
        match execute_plan(&current, &targets, steps, &scenario.world.limits, scenario.world.dt) {
            Ok(ex) => {
                states.extend(ex.states);
                deviations.extend(ex.deviations);
            }
            Err(e) => {
                failure = Some(format!("execution failed at step {step}: {e}"));
                break;
            }
        }
        let mut world_plan = plan;
        for p in world_plan.points.iter_mut() {
            p.px += current.x;
            p.py += current.y;
        }
        plans.push(PlanRecord {
            step,
            trajectory: world_plan,
        });
    }
    let mut log = EpisodeLog::new(scenario.clone(), states);
    log.plans = plans;
    log.deviations = deviations;
    log.failure = failure;
    log
}
