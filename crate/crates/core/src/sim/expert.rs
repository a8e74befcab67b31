//! Scripted demonstrator with full knowledge of the event script.
//!
//! Longitudinal motion is cruise at `v_ref`, a smooth quintic stop at a red
//! stop line and a quintic launch on green. Lateral motion is a sum of
//! quintic avoidance bumps, one per popup obstacle. Both profiles are closed
//! form in continuous time and sampled at the step grid.

use crate::error::Result;
use crate::observation::{EgoState, Observation};
use crate::sim::rollout::{EpisodeLog, Planner};
use crate::sim::scenario::{ExpertConfig, Scenario};
use crate::trajectory::{Trajectory, Waypoint};

/// Quintic smoothstep `10u³ − 15u⁴ + 6u⁵` on `[0, 1]`.
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// `∫₀ᵘ smoothstep`, equal to `1/2` at `u = 1`.
fn smoothstep_integral(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    let u4 = u * u * u * u;
    u4 * (2.5 + u * (-3.0 + u))
}

/// Peak rate of a quintic transition of height `d` over `duration`.
pub fn quintic_peak_rate(d: f64, duration: f64) -> f64 {
    1.875 * d.abs() / duration
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SignalPlan {
    pub stop_x: f64,
    pub green_time: Option<f64>,
}

/// Expert longitudinal position and speed as functions of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Longitudinal {
    v: f64,
    ramp: f64,
    signal: Option<SignalPlan>,
}

impl Longitudinal {
    /// Duration of a quintic speed change `v → 0` with peak deceleration `decel`.
    pub fn ramp_duration(v: f64, decel: f64) -> f64 {
        1.875 * v / decel
    }

    pub fn new(v: f64, decel: f64, signal: Option<SignalPlan>) -> Self {
        Self {
            v,
            ramp: Self::ramp_duration(v, decel),
            signal,
        }
    }

    fn brake_start(&self, s: &SignalPlan) -> f64 {
        (s.stop_x - 0.5 * self.v * self.ramp) / self.v
    }

    pub fn x(&self, t: f64) -> f64 {
        let v = self.v;
        let Some(s) = self.signal else {
            return v * t;
        };
        let tb = self.brake_start(&s);
        if t <= tb {
            return v * t;
        }
        let stop_time = tb + self.ramp;
        if t <= stop_time {
            let u = (t - tb) / self.ramp;
            return v * tb + v * self.ramp * (u - smoothstep_integral(u));
        }
        match s.green_time {
            Some(tg) if t > tg.max(stop_time) => {
                let tg = tg.max(stop_time);
                let dt = t - tg;
                if dt <= self.ramp {
                    s.stop_x + v * self.ramp * smoothstep_integral(dt / self.ramp)
                } else {
                    s.stop_x + 0.5 * v * self.ramp + v * (dt - self.ramp)
                }
            }
            _ => s.stop_x,
        }
    }

    /// First time at which the expert reaches `x`, by bisection.
    pub fn time_at(&self, x: f64, horizon: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, horizon.max(x / self.v) + 4.0 * self.ramp + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.x(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// One avoidance manoeuvre: ramp to `offset`, hold, ramp back to the centreline.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bump {
    start: f64,
    lead: f64,
    hold: f64,
    offset: f64,
}

impl Bump {
    fn y(&self, t: f64) -> f64 {
        let peak = self.start + self.lead;
        let release = peak + self.hold;
        if t <= self.start {
            0.0
        } else if t <= peak {
            self.offset * smoothstep((t - self.start) / self.lead)
        } else if t <= release {
            self.offset
        } else {
            self.offset * (1.0 - smoothstep((t - release) / self.lead))
        }
    }
}

/// Lateral offset that clears an obstacle at `obstacle_y` by `margin`,
/// passing on the side of the lane away from it.
pub fn avoidance_offset(obstacle_y: f64, obstacle_radius: f64, ego_radius: f64, margin: f64) -> f64 {
    let clearance = obstacle_radius + ego_radius + margin;
    if obstacle_y >= 0.0 {
        obstacle_y - clearance
    } else {
        obstacle_y + clearance
    }
}

/// Continuous-time expert motion for one scenario.
#[derive(Debug, Clone)]
pub struct ExpertProfile {
    longitudinal: Longitudinal,
    bumps: Vec<Bump>,
    dt: f64,
}

impl ExpertProfile {
    pub fn new(scenario: &Scenario) -> Self {
        let longitudinal = scenario.longitudinal();
        let ExpertConfig {
            lead_time,
            margin,
            hold_time,
            ..
        } = scenario.world.expert;
        let horizon = scenario.episode_steps as f64 * scenario.world.dt;
        let bumps = scenario
            .obstacles()
            .map(|(_, pos, radius)| {
                let t_c = longitudinal.time_at(pos[0], horizon);
                Bump {
                    start: t_c - lead_time,
                    lead: lead_time,
                    hold: hold_time,
                    offset: avoidance_offset(pos[1], radius, scenario.world.ego_radius, margin),
                }
            })
            .collect();
        Self {
            longitudinal,
            bumps,
            dt: scenario.world.dt,
        }
    }

    fn position(&self, t: f64) -> (f64, f64) {
        let x = if t < 0.0 {
            self.longitudinal.v * t
        } else {
            self.longitudinal.x(t)
        };
        let y = self.bumps.iter().map(|b| b.y(t)).sum();
        (x, y)
    }

    /// State at integer `step`; velocities are backward differences so the
    /// sampled log is kinematically consistent with the step grid.
    pub fn state(&self, step: i64) -> EgoState {
        let t = step as f64 * self.dt;
        let (x, y) = self.position(t);
        let (xp, yp) = self.position(t - self.dt);
        let vx = (x - xp) / self.dt;
        let vy = (y - yp) / self.dt;
        EgoState {
            x,
            y,
            vx,
            vy,
            heading: heading_of(vx, vy, 0.0),
        }
    }
}

pub(crate) fn heading_of(vx: f64, vy: f64, fallback: f64) -> f64 {
    if vx.hypot(vy) > 1e-9 {
        vy.atan2(vx)
    } else {
        fallback
    }
}

/// Logs the expert over the whole episode.
pub fn expert_rollout(scenario: &Scenario) -> EpisodeLog {
    let profile = ExpertProfile::new(scenario);
    let states = (0..scenario.episode_steps as i64)
        .map(|k| profile.state(k))
        .collect();
    EpisodeLog::new(scenario.clone(), states)
}

/// Future expert waypoints relative to `origin`, for steps `from+1 ..= from+len`.
pub(crate) fn relative_future(states: &[EgoState], origin: &EgoState, dt: f64) -> Trajectory {
    let points = states
        .iter()
        .map(|s| {
            Waypoint::new(s.x - origin.x, s.y - origin.y, s.heading, s.vx, s.vy)
        })
        .collect();
    Trajectory::new(points, dt)
}

/// Replays the expert as a closed-loop planner.
#[derive(Debug, Clone)]
pub struct ExpertPlanner {
    pub horizon: usize,
}

impl Planner for ExpertPlanner {
    fn plan(&self, scenario: &Scenario, obs: &Observation) -> Result<Trajectory> {
        let profile = ExpertProfile::new(scenario);
        let step = obs.current_step as i64;
        let future: Vec<EgoState> = (1..=self.horizon as i64)
            .map(|k| profile.state(step + k))
            .collect();
        Ok(relative_future(&future, obs.current(), scenario.world.dt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_integral_endpoints() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep_integral(1.0) - 0.5).abs() < 1e-15);
        // finite-difference derivative of the integral is the smoothstep
        let h = 1e-6;
        for u in [0.1, 0.4, 0.77] {
            let d = (smoothstep_integral(u + h) - smoothstep_integral(u - h)) / (2.0 * h);
            assert!((d - smoothstep(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn longitudinal_stops_at_line_and_relaunches() {
        let lon = Longitudinal::new(
            10.0,
            1.6,
            Some(SignalPlan {
                stop_x: 120.0,
                green_time: Some(25.0),
            }),
        );
        let tb = lon.brake_start(&lon.signal.unwrap());
        let stop = tb + lon.ramp;
        assert!((lon.x(stop) - 120.0).abs() < 1e-9);
        assert_eq!(lon.x(stop + 1.0), 120.0);
        assert!(lon.x(40.0) > 120.0);
        // monotone
        let xs: Vec<f64> = (0..400).map(|i| lon.x(i as f64 * 0.1)).collect();
        assert!(xs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn offset_side_is_away_from_obstacle() {
        assert!((avoidance_offset(0.3, 1.0, 0.7, 0.5) + 1.9).abs() < 1e-12);
        assert!((avoidance_offset(-0.3, 1.0, 0.7, 0.5) - 1.9).abs() < 1e-12);
    }
}
