//! Closed-loop driving score and multi-run comparison.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::SignalState;
use crate::sim::{closed_loop_rollout, EpisodeLog, Planner, RolloutConfig, Scenario};
use crate::trajectory::fmt_real;

pub const COMFORT_ACCEL: f64 = 2.0;
pub const COMFORT_JERK: f64 = 4.0;
pub const SPEED_ALLOWANCE: f64 = 1.05;
/// Speed allowed past a red stop line while the signal is red, m/s.
pub const RED_CREEP_SPEED: f64 = 0.5;
const SPEED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingScore {
    pub no_collision: f64,
    pub drivable: f64,
    pub progress: f64,
    pub comfort: f64,
    pub speed_compliance: f64,
    pub composite: f64,
    /// The log ended early; both gates are failed.
    pub truncated: bool,
}

impl DrivingScore {
    fn new(
        no_collision: bool,
        drivable: bool,
        progress: f64,
        comfort: f64,
        speed_compliance: f64,
        truncated: bool,
    ) -> Self {
        let gate = |b: bool| f64::from(u8::from(b));
        let (nc, dr) = (gate(no_collision), gate(drivable));
        Self {
            no_collision: nc,
            drivable: dr,
            progress,
            comfort,
            speed_compliance,
            composite: nc * dr * (0.5 * progress + 0.25 * comfort + 0.25 * speed_compliance),
            truncated,
        }
    }
}

/// Smallest clearance `distance − radii` to any obstacle that has appeared.
pub fn min_clearance(log: &EpisodeLog) -> f64 {
    let r_e = log.scenario.world.ego_radius;
    let mut best = f64::INFINITY;
    for (trigger, c, r) in log.scenario.obstacles() {
        for s in log.states.iter().skip(trigger) {
            best = best.min((s.x - c[0]).hypot(s.y - c[1]) - r - r_e);
        }
    }
    best
}

/// Longitudinal acceleration and jerk by finite differences, zero at step 0.
fn accel_jerk(log: &EpisodeLog) -> (Vec<f64>, Vec<f64>) {
    let dt = log.scenario.world.dt;
    let mut a = vec![0.0; log.states.len()];
    let mut j = vec![0.0; log.states.len()];
    for t in 1..log.states.len() {
        a[t] = (log.states[t].vx - log.states[t - 1].vx) / dt;
        j[t] = (a[t] - a[t - 1]) / dt;
    }
    (a, j)
}

fn fraction(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

pub fn score_episode(log: &EpisodeLog, expert: &EpisodeLog) -> Result<DrivingScore> {
    if log.states.is_empty() || expert.states.is_empty() {
        return Err(Error::Data("cannot score an empty log".into()));
    }
    if log.scenario != expert.scenario {
        return Err(Error::Data("log and expert log come from different scenarios".into()));
    }
    let sc = &log.scenario;
    let truncated = !log.is_complete();
    let no_collision = min_clearance(log) > 0.0;
    let drivable = log.states.iter().all(|s| s.y.abs() <= sc.lane.half_width);

    let start = log.states[0].x;
    let ego_dist = log.states.last().unwrap().x - start;
    let expert_dist = expert.states.last().unwrap().x - expert.states[0].x;
    let progress = if expert_dist > 0.0 {
        (ego_dist / expert_dist).clamp(0.0, 1.0)
    } else {
        1.0
    };

    let (a, j) = accel_jerk(log);
    let comfy = a
        .iter()
        .zip(&j)
        .filter(|(a, j)| a.abs() <= COMFORT_ACCEL && j.abs() <= COMFORT_JERK)
        .count();
    let comfort = fraction(comfy, log.states.len());

    let compliant = log
        .states
        .iter()
        .enumerate()
        .filter(|(t, s)| {
            let limit = match sc.signal_at(*t) {
                Some((stop_x, SignalState::Red)) if s.x > stop_x => RED_CREEP_SPEED,
                _ => SPEED_ALLOWANCE * sc.v_ref,
            };
            s.vx.hypot(s.vy) <= limit + SPEED_TOLERANCE
        })
        .count();
    let speed = fraction(compliant, log.states.len());

    Ok(DrivingScore::new(
        no_collision && !truncated,
        drivable && !truncated,
        progress,
        comfort,
        speed,
        truncated,
    ))
}

/// Closed-loop evaluation of one planner on each scenario, scored against the
/// expert. Results keep the scenario order for any `jobs`.
pub fn evaluate_planner(
    planner: &dyn Planner,
    scenarios: &[Scenario],
    rollout: &RolloutConfig,
    jobs: usize,
) -> Result<Vec<(EpisodeLog, DrivingScore)>> {
    let run = || {
        scenarios
            .par_iter()
            .map(|s| {
                let log = closed_loop_rollout(planner, s, rollout);
                let expert = crate::sim::expert_rollout(s);
                let score = score_episode(&log, &expert)?;
                Ok((log, score))
            })
            .collect::<Result<Vec<_>>>()
    };
    crate::parallel::with_jobs(jobs, run)?
}

/// Per-scenario scores of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub config: String,
    pub scores: Vec<(u64, DrivingScore)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population statistics, summed in order.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: String,
    pub scenarios: usize,
    pub composite: MeanStd,
    pub no_collision: MeanStd,
    pub drivable: MeanStd,
    pub progress: MeanStd,
    pub comfort: MeanStd,
    pub speed_compliance: MeanStd,
}

impl Summary {
    pub fn of(run: &RunResult) -> Self {
        let stat = |f: fn(&DrivingScore) -> f64| MeanStd::of(run.scores.iter().map(|(_, s)| f(s)));
        Self {
            config: run.config.clone(),
            scenarios: run.scores.len(),
            composite: stat(|s| s.composite),
            no_collision: stat(|s| s.no_collision),
            drivable: stat(|s| s.drivable),
            progress: stat(|s| s.progress),
            comfort: stat(|s| s.comfort),
            speed_compliance: stat(|s| s.speed_compliance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<Summary>,
}

pub const REPORT_HEADER: [&str; 8] = [
    "config",
    "mean_composite",
    "std_composite",
    "no_collision_rate",
    "drivable_rate",
    "mean_progress",
    "mean_comfort",
    "mean_speed",
];

impl Report {
    /// Row indices by descending mean composite, input order on ties.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by(|a, b| {
            self.rows[*b]
                .composite
                .mean
                .total_cmp(&self.rows[*a].composite.mean)
        });
        idx
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            wtr.write_record([
                r.config.clone(),
                fmt_real(r.composite.mean),
                fmt_real(r.composite.std),
                fmt_real(r.no_collision.mean),
                fmt_real(r.drivable.mean),
                fmt_real(r.progress.mean),
                fmt_real(r.comfort.mean),
                fmt_real(r.speed_compliance.mean),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<report>", e))
    }
}

/// The `config` column of a report CSV.
pub fn read_report_configs<R: Read>(r: R) -> Result<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(REPORT_HEADER) {
        return Err(Error::Data("unexpected report header".into()));
    }
    rdr.records().map(|rec| Ok(rec?[0].to_string())).collect()
}

/// Summaries of runs that were evaluated on the same scenario set.
pub fn compare_runs(runs: &[RunResult]) -> Result<Report> {
    let Some(first) = runs.first() else {
        return Err(Error::Data("no runs to compare".into()));
    };
    let reference: BTreeSet<u64> = first.scores.iter().map(|s| s.0).collect();
    for run in &runs[1..] {
        let set: BTreeSet<u64> = run.scores.iter().map(|s| s.0).collect();
        if set != reference || run.scores.len() != first.scores.len() {
            return Err(Error::Data(format!(
                "run {:?} was evaluated on a different scenario set than {:?}",
                run.config, first.config
            )));
        }
    }
    Ok(Report {
        rows: runs.iter().map(Summary::of).collect(),
    })
}

pub const SCORES_HEADER: [&str; 8] = [
    "scenario_seed",
    "no_collision",
    "drivable",
    "progress",
    "comfort",
    "speed_compliance",
    "composite",
    "truncated",
];

/// Per-scenario detail CSV.
pub fn write_scores<W: Write>(scores: &[(u64, DrivingScore)], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SCORES_HEADER)?;
    for (seed, s) in scores {
        wtr.write_record([
            seed.to_string(),
            fmt_real(s.no_collision),
            fmt_real(s.drivable),
            fmt_real(s.progress),
            fmt_real(s.comfort),
            fmt_real(s.speed_compliance),
            fmt_real(s.composite),
            s.truncated.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<scores>", e))
}

pub fn read_scores<R: Read>(r: R) -> Result<Vec<(u64, DrivingScore)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(SCORES_HEADER) {
        return Err(Error::Data(format!("unexpected score header {header:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Data(format!("bad number {s:?} in scores")))
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let seed = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("bad scenario seed {:?}", &rec[0])))?;
        out.push((
            seed,
            DrivingScore {
                no_collision: num(&rec[1])?,
                drivable: num(&rec[2])?,
                progress: num(&rec[3])?,
                comfort: num(&rec[4])?,
                speed_compliance: num(&rec[5])?,
                composite: num(&rec[6])?,
                truncated: rec[7].trim() == "true",
            },
        ));
    }
    Ok(out)
}
