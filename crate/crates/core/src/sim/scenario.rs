//! Scenario scripts and their seeded sampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::SignalState;
use crate::seed::{derive_seed, rng_for};
use crate::sim::expert::{quintic_peak_rate, Longitudinal, SignalPlan};
use crate::trajectory::DEFAULT_DT;

/// Kinematic limits of the waypoint tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerLimits {
    /// Longitudinal acceleration bound, m/s².
    pub a_max: f64,
    /// Lateral rate bound, m/s.
    pub lat_rate_max: f64,
}

impl Default for TrackerLimits {
    fn default() -> Self {
        Self {
            a_max: 4.0,
            lat_rate_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Seconds between the start of an avoidance manoeuvre and closest approach.
    pub lead_time: f64,
    /// Clearance kept between ego and obstacle outlines, m.
    pub margin: f64,
    /// Seconds the peak offset is held after closest approach.
    pub hold_time: f64,
    /// Peak deceleration of the smooth stop, m/s².
    pub comfort_decel: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            lead_time: 1.5,
            margin: 0.5,
            hold_time: 0.4,
            comfort_decel: 1.6,
        }
    }
}

/// Physical parameters shared by the expert, the tracker and the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldParams {
    pub dt: f64,
    pub ego_radius: f64,
    pub limits: TrackerLimits,
    pub expert: ExpertConfig,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            ego_radius: 0.7,
            limits: TrackerLimits::default(),
            expert: ExpertConfig::default(),
        }
    }
}

/// Straight lane along +x centred on `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub half_width: f64,
}

impl Lane {
    pub fn lateral_offset(&self, y: f64) -> f64 {
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    PopupObstacle { position: [f64; 2], radius: f64 },
    SignalSwitch { position: f64, switch_to: SignalState },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub trigger_step: usize,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub lane: Lane,
    pub v_ref: f64,
    pub episode_steps: usize,
    pub events: Vec<Event>,
    pub world: WorldParams,
}

impl Scenario {
    /// Scenario with no events.
    pub fn empty(seed: u64, config: &ScenarioConfig) -> Self {
        Self {
            seed,
            lane: Lane {
                half_width: config.lane_half_width,
            },
            v_ref: config.v_ref,
            episode_steps: config.episode_steps,
            events: Vec::new(),
            world: config.world,
        }
    }

    pub fn obstacles(&self) -> impl Iterator<Item = (usize, [f64; 2], f64)> + '_ {
        self.events.iter().filter_map(|e| match e.kind {
            EventKind::PopupObstacle { position, radius } => {
                Some((e.trigger_step, position, radius))
            }
            _ => None,
        })
    }

    /// Signal switches in trigger order: `(step, stop_x, state)`.
    pub fn signal_switches(&self) -> Vec<(usize, f64, SignalState)> {
        let mut v: Vec<_> = self
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::SignalSwitch {
                    position,
                    switch_to,
                } => Some((e.trigger_step, position, switch_to)),
                _ => None,
            })
            .collect();
        v.sort_by_key(|s| s.0);
        v
    }

    /// Displayed signal at `step`, if any switch has happened yet.
    pub fn signal_at(&self, step: usize) -> Option<(f64, SignalState)> {
        self.signal_switches()
            .into_iter()
            .take_while(|s| s.0 <= step)
            .last()
            .map(|(_, x, s)| (x, s))
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.events {
            if e.trigger_step >= self.episode_steps {
                return Err(Error::Config(format!(
                    "event triggers at step {} beyond episode of {} steps",
                    e.trigger_step, self.episode_steps
                )));
            }
            if let EventKind::PopupObstacle { position, radius } = e.kind {
                if !(radius > 0.0) || position[1].abs() > self.lane.half_width {
                    return Err(Error::Config(format!(
                        "obstacle at {position:?} with radius {radius} is off the lane"
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn longitudinal(&self) -> Longitudinal {
        let switches = self.signal_switches();
        let red = switches.iter().find(|s| s.2 == SignalState::Red);
        let signal = red.map(|&(_, stop_x, _)| {
            let green_step = switches
                .iter()
                .find(|s| s.2 == SignalState::Green && s.0 > red.unwrap().0)
                .map(|s| s.0);
            SignalPlan {
                stop_x,
                green_time: green_step.map(|s| s as f64 * self.world.dt),
            }
        });
        Longitudinal::new(self.v_ref, self.world.expert.comfort_decel, signal)
    }
}

/// Ranges and probabilities the sampler draws from. Durations are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub episode_steps: usize,
    pub v_ref: f64,
    pub lane_half_width: f64,
    /// Inclusion probability of each candidate event slot.
    pub event_probability: f64,
    pub max_obstacles: usize,
    pub obstacle_radius: [f64; 2],
    /// Range of `|y|` of obstacle centres; the side is drawn uniformly.
    pub obstacle_lateral: [f64; 2],
    /// Time between an obstacle appearing and the expert's closest approach.
    pub popup_lead: [f64; 2],
    pub signal_trigger: [f64; 2],
    /// Time between the switch to red and the start of braking.
    pub signal_gap: [f64; 2],
    /// Time spent stopped before the switch back to green.
    pub red_hold: [f64; 2],
    pub min_event_gap: f64,
    pub world: WorldParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            episode_steps: 300,
            v_ref: 10.0,
            lane_half_width: 3.5,
            event_probability: 0.7,
            max_obstacles: 3,
            obstacle_radius: [0.5, 1.0],
            obstacle_lateral: [0.2, 0.6],
            popup_lead: [2.0, 3.5],
            signal_trigger: [3.0, 8.0],
            signal_gap: [0.5, 2.0],
            red_hold: [1.0, 4.0],
            min_event_gap: 3.0,
            world: WorldParams::default(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(Error::Config(format!(
            "{name} range {r:?} must be ordered and >= {min}"
        )));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        if self.episode_steps < 2 {
            return Err(Error::Config("episode_steps must be at least 2".into()));
        }
        if !(self.v_ref > 0.0) || !(w.dt > 0.0) || !(w.ego_radius > 0.0) {
            return Err(Error::Config(
                "v_ref, dt and ego_radius must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.event_probability) {
            return Err(Error::Config("event_probability must lie in [0, 1]".into()));
        }
        check_range("obstacle_radius", self.obstacle_radius, 1e-6)?;
        check_range("obstacle_lateral", self.obstacle_lateral, 0.0)?;
        check_range("popup_lead", self.popup_lead, 0.0)?;
        check_range("signal_trigger", self.signal_trigger, 0.0)?;
        check_range("signal_gap", self.signal_gap, 0.0)?;
        check_range("red_hold", self.red_hold, 0.0)?;
        if self.obstacle_radius[1] > self.lane_half_width {
            return Err(Error::Config(format!(
                "obstacle radius {} exceeds lane half-width {}",
                self.obstacle_radius[1], self.lane_half_width
            )));
        }
        let e = &w.expert;
        if !(e.lead_time > 0.0 && e.margin >= 0.0 && e.hold_time >= 0.0) {
            return Err(Error::Config("expert timings must be positive".into()));
        }
        let peak =
            self.obstacle_radius[1] + w.ego_radius + e.margin - self.obstacle_lateral[0];
        if peak > self.lane_half_width {
            return Err(Error::Config(format!(
                "avoidance offset {peak:.3} m leaves the lane (half-width {})",
                self.lane_half_width
            )));
        }
        let rate = quintic_peak_rate(peak, e.lead_time);
        if rate > w.limits.lat_rate_max {
            return Err(Error::Config(format!(
                "avoidance needs lateral rate {rate:.3} m/s above tracker limit {}",
                w.limits.lat_rate_max
            )));
        }
        if self.v_ref.hypot(rate) > 1.05 * self.v_ref {
            return Err(Error::Config(format!(
                "avoidance at {rate:.3} m/s lateral rate breaks the 5% speed allowance"
            )));
        }
        if !(e.comfort_decel > 0.0 && e.comfort_decel < 2.0 && e.comfort_decel <= w.limits.a_max) {
            return Err(Error::Config(
                "comfort_decel must lie in (0, 2) and within a_max".into(),
            ));
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..r[1])
    }
}

/// `n` scenarios with seeds `derive_seed(seed, stream, i)`.
pub fn sample_scenarios(seed: u64, stream: &str, n: usize, config: &ScenarioConfig) -> Result<Vec<Scenario>> {
    (0..n as u64)
        .map(|i| sample_scenario(derive_seed(seed, stream, i), config))
        .collect()
}

/// Draws a scenario; a pure function of `(seed, config)`.
pub fn sample_scenario(seed: u64, config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = rng_for(seed, "scenario", 0);
    let dt = config.world.dt;
    let v = config.v_ref;
    let duration = (config.episode_steps - 1) as f64 * dt;
    let mut scenario = Scenario::empty(seed, config);

    // Intervals during which the expert cruises at v_ref.
    let mut cruise: Vec<(f64, f64)> = vec![(0.0, f64::INFINITY)];
    let mut triggers: Vec<f64> = Vec::new();

    if rng.gen_bool(config.event_probability) {
        let red_step = (uniform(&mut rng, config.signal_trigger) / dt).round() as usize;
        let gap = uniform(&mut rng, config.signal_gap);
        let hold = uniform(&mut rng, config.red_hold);
        let t_red = red_step as f64 * dt;
        let ramp = Longitudinal::ramp_duration(v, config.world.expert.comfort_decel);
        let brake_start = t_red + gap;
        let stop_x = v * brake_start + 0.5 * v * ramp;
        let green_step = ((brake_start + ramp + hold) / dt).ceil() as usize;
        if red_step >= 1 && green_step < config.episode_steps {
            scenario.events.push(Event {
                trigger_step: red_step,
                kind: EventKind::SignalSwitch {
                    position: stop_x,
                    switch_to: SignalState::Red,
                },
            });
            scenario.events.push(Event {
                trigger_step: green_step,
                kind: EventKind::SignalSwitch {
                    position: stop_x,
                    switch_to: SignalState::Green,
                },
            });
            triggers.extend([t_red, green_step as f64 * dt]);
            cruise = vec![
                (0.0, brake_start),
                (green_step as f64 * dt + ramp, f64::INFINITY),
            ];
        }
    }

    let profile = scenario.longitudinal();
    let e = config.world.expert;
    let mut windows: Vec<(f64, f64)> = Vec::new();
    for _ in 0..config.max_obstacles {
        if !rng.gen_bool(config.event_probability) {
            continue;
        }
        for _attempt in 0..32 {
            let ahead = uniform(&mut rng, config.popup_lead);
            let t_c = rng.gen_range(0.0..duration);
            let radius = uniform(&mut rng, config.obstacle_radius);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let lateral = side * uniform(&mut rng, config.obstacle_lateral);

            let trigger_step = ((t_c - ahead) / dt).round();
            if trigger_step < 1.0 || trigger_step >= config.episode_steps as f64 {
                continue;
            }
            let t_trig = trigger_step * dt;
            let window = (t_c - e.lead_time - 0.5, t_c + e.hold_time + e.lead_time + 0.5);
            let in_cruise = cruise
                .iter()
                .any(|(a, b)| window.0.max(t_trig) >= *a && window.1 <= *b);
            let disjoint = windows.iter().all(|w| window.1 < w.0 || window.0 > w.1);
            let spaced = triggers
                .iter()
                .all(|t| (t - t_trig).abs() >= config.min_event_gap);
            if window.0 < 0.0 || !in_cruise || !disjoint || !spaced {
                continue;
            }
            windows.push(window);
            triggers.push(t_trig);
            scenario.events.push(Event {
                trigger_step: trigger_step as usize,
                kind: EventKind::PopupObstacle {
                    position: [profile.x(t_c), lateral],
                    radius,
                },
            });
            break;
        }
    }
    scenario.events.sort_by_key(|e| e.trigger_step);
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scenario() {
        let cfg = ScenarioConfig::default();
        assert_eq!(sample_scenario(5, &cfg).unwrap(), sample_scenario(5, &cfg).unwrap());
    }

    #[test]
    fn zero_probability_gives_empty_script() {
        let cfg = ScenarioConfig {
            event_probability: 0.0,
            ..ScenarioConfig::default()
        };
        for seed in 0..20 {
            assert!(sample_scenario(seed, &cfg).unwrap().events.is_empty());
        }
    }

    #[test]
    fn seeds_produce_distinct_scripts() {
        let cfg = ScenarioConfig::default();
        let scripts: Vec<_> = (0..100).map(|s| sample_scenario(s, &cfg).unwrap().events).collect();
        let mut differing = 0;
        for pair in scripts.windows(2) {
            if pair[0] != pair[1] {
                differing += 1;
            }
        }
        assert!(differing >= 95, "only {differing} of 99 consecutive pairs differ");
    }

    #[test]
    fn oversized_obstacle_is_config_error() {
        let cfg = ScenarioConfig {
            obstacle_radius: [0.5, 4.0],
            ..ScenarioConfig::default()
        };
        assert!(matches!(sample_scenario(0, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn events_respect_spacing_and_episode() {
        let cfg = ScenarioConfig::default();
        for seed in 0..200 {
            let s = sample_scenario(seed, &cfg).unwrap();
            let steps: Vec<usize> = s.events.iter().map(|e| e.trigger_step).collect();
            assert!(steps.windows(2).all(|w| w[1] - w[0] >= 30), "{steps:?}");
            assert!(steps.iter().all(|t| *t < cfg.episode_steps));
        }
    }
}
