//! Desk-scale closed-loop driving world.
//!
//! A straight lane, popup obstacles and a traffic signal driven by a seeded
//! event script. The expert knows the whole script; planners only see what
//! has already happened.

pub mod expert;
pub mod rollout;
pub mod scenario;
pub mod world;

pub use expert::{expert_rollout, ExpertPlanner, ExpertProfile};
pub use rollout::{closed_loop_rollout, initial_state, EpisodeLog, PlanRecord, Planner, RolloutConfig};
pub use scenario::{
    sample_scenario, sample_scenarios, Event, EventKind, ExpertConfig, Lane, Scenario, ScenarioConfig, TrackerLimits,
    WorldParams,
};
pub use world::{execute_plan, observe, Execution, WorldState};

use rayon::prelude::*;

/// Expert logs for each scenario, in order, using `jobs` workers.
pub fn expert_logs(scenarios: &[Scenario], jobs: usize) -> crate::Result<Vec<EpisodeLog>> {
    crate::parallel::with_jobs(jobs, || scenarios.par_iter().map(expert_rollout).collect())
}
