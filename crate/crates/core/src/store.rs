//! On-disk layout of episode logs and decompositions.
//!
//! An episode directory holds:
//!
//! | file               | content                                                     |
//! |--------------------|-------------------------------------------------------------|
//! | `events.json`      | the full scenario, including the event script               |
//! | `states.csv`       | `step,x,y,vx,vy,heading,deviation`                          |
//! | `observations.csv` | `step,visible_obstacles,signal,stop_x` as seen by a planner |
//! | `plans/NNNN.csv`   | closed-loop plans in world frame, trajectory CSV            |
//! | `failure.txt`      | present only when the rollout was aborted                   |

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{EgoState, SignalState};
use crate::sim::{EpisodeLog, PlanRecord, Scenario};
use crate::trajectory::{fmt_real, Trajectory};
use crate::wavelet::{ScopedStack, WaveletPyramid, CONVENTION};

const STATES_HEADER: [&str; 7] = ["step", "x", "y", "vx", "vy", "heading", "deviation"];

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn episode_dir_name(index: usize) -> String {
    format!("episode_{index:05}")
}

pub fn write_episode(dir: &Path, log: &EpisodeLog, history: usize) -> Result<()> {
    create_dir(dir)?;
    let events = serde_json::to_string_pretty(&log.scenario)?;
    let p = dir.join("events.json");
    fs::write(&p, events).map_err(|e| Error::io(&p, e))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("states.csv"))?);
    w.write_record(STATES_HEADER)?;
    for (t, s) in log.states.iter().enumerate() {
        let dev = log.deviations.get(t).copied().unwrap_or(0.0);
        w.write_record([
            t.to_string(),
            fmt_real(s.x),
            fmt_real(s.y),
            fmt_real(s.vx),
            fmt_real(s.vy),
            fmt_real(s.heading),
            fmt_real(dev),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("states.csv"), e))?;

    let mut w = csv::Writer::from_writer(create(&dir.join("observations.csv"))?);
    w.write_record(["step", "visible_obstacles", "signal", "stop_x"])?;
    for t in 0..log.states.len() {
        let obs = log.observation(t, history);
        let (signal, stop_x) = match obs.signal {
            Some(s) => (
                match s.state {
                    SignalState::Green => "green",
                    SignalState::Red => "red",
                },
                fmt_real(s.stop_x),
            ),
            None => ("none", String::new()),
        };
        w.write_record([
            t.to_string(),
            obs.visible_obstacles.len().to_string(),
            signal.to_string(),
            stop_x,
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("observations.csv"), e))?;

    if !log.plans.is_empty() {
        let plans = dir.join("plans");
        create_dir(&plans)?;
        for p in &log.plans {
            p.trajectory
                .write_csv(create(&plans.join(format!("{:04}.csv", p.step)))?)?;
        }
    }
    if let Some(f) = &log.failure {
        let p = dir.join("failure.txt");
        fs::write(&p, f).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("bad {what} value {s:?}")))
}

pub fn read_episode(dir: &Path) -> Result<EpisodeLog> {
    let p = dir.join("events.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let scenario: Scenario = serde_json::from_str(&text)?;

    let mut rdr = csv::Reader::from_reader(open(&dir.join("states.csv"))?);
    if rdr.headers()?.iter().ne(STATES_HEADER) {
        return Err(Error::Data(format!("{}: unexpected states header", dir.display())));
    }
    let mut states = Vec::new();
    let mut deviations = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != STATES_HEADER.len() || parse::<usize>(&rec[0], "step")? != i {
            return Err(Error::Data(format!("{}: malformed row {i}", dir.display())));
        }
        let f = |k: usize| parse::<f64>(&rec[k], STATES_HEADER[k]);
        states.push(EgoState {
            x: f(1)?,
            y: f(2)?,
            vx: f(3)?,
            vy: f(4)?,
            heading: f(5)?,
        });
        deviations.push(f(6)?);
    }

    let mut plans = Vec::new();
    let plan_dir = dir.join("plans");
    if plan_dir.is_dir() {
        for path in sorted_entries(&plan_dir, |p| p.extension().is_some_and(|e| e == "csv"))? {
            let step = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("bad plan file name {}", path.display())))?;
            plans.push(PlanRecord {
                step,
                trajectory: Trajectory::read_csv(open(&path)?)?,
            });
        }
    }
    let failure_path = dir.join("failure.txt");
    let failure = if failure_path.exists() {
        Some(fs::read_to_string(&failure_path).map_err(|e| Error::io(&failure_path, e))?)
    } else {
        None
    };

    let expert_like = plans.is_empty();
    let mut log = EpisodeLog::new(scenario, states);
    log.plans = plans;
    log.failure = failure;
    if !expert_like {
        log.deviations = deviations;
    }
    Ok(log)
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if keep(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// All `episode_*` directories under `dir`, in name order.
pub fn read_episodes(dir: &Path) -> Result<Vec<EpisodeLog>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    sorted_entries(dir, |p| {
        p.is_dir()
            && p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("episode_"))
    })?
    .iter()
    .map(|p| read_episode(p))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionMeta {
    pub mode: String,
    pub levels: usize,
    pub convention: String,
    pub source_length: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    pub files: Vec<String>,
}

fn write_positions(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["idx", "px", "py"])?;
    for (i, row) in m.rows().into_iter().enumerate() {
        w.write_record([i.to_string(), fmt_real(row[0]), fmt_real(row[1])])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_positions(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut vals = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Data(format!("{}: expected idx,px,py", path.display())));
        }
        vals.push(parse(&rec[1], "px")?);
        vals.push(parse(&rec[2], "py")?);
        rows += 1;
    }
    Array2::from_shape_vec((rows, 2), vals).map_err(|e| Error::Shape(e.to_string()))
}

fn write_meta(dir: &Path, meta: &DecompositionMeta) -> Result<()> {
    let p = dir.join("metadata.json");
    fs::write(&p, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&p, e))
}

/// `approximation.csv`, `detail_1.csv` … `detail_N.csv` and `metadata.json`.
pub fn write_pyramid(dir: &Path, pyr: &WaveletPyramid) -> Result<DecompositionMeta> {
    create_dir(dir)?;
    let mut files = vec!["approximation.csv".to_string()];
    write_positions(&dir.join(&files[0]), &pyr.approximation)?;
    for (i, d) in pyr.details.iter().enumerate() {
        let name = format!("detail_{}.csv", i + 1);
        write_positions(&dir.join(&name), d)?;
        files.push(name);
    }
    let meta = DecompositionMeta {
        mode: "dwt".into(),
        levels: pyr.levels(),
        convention: CONVENTION.into(),
        source_length: pyr.source_length(),
        horizon: None,
        files,
    };
    write_meta(dir, &meta)?;
    Ok(meta)
}

/// `level_1.csv` … `level_N.csv` and `metadata.json`.
pub fn write_stack(dir: &Path, stack: &ScopedStack, source_length: usize) -> Result<DecompositionMeta> {
    create_dir(dir)?;
    let mut files = Vec::new();
    for (i, d) in stack.levels.iter().enumerate() {
        let name = format!("level_{}.csv", i + 1);
        write_positions(&dir.join(&name), d)?;
        files.push(name);
    }
    let meta = DecompositionMeta {
        mode: "dwh".into(),
        levels: stack.levels.len(),
        convention: "stride-2^(l-1)".into(),
        source_length,
        horizon: Some(stack.horizon),
        files,
    };
    write_meta(dir, &meta)?;
    Ok(meta)
}

pub fn read_pyramid(dir: &Path) -> Result<WaveletPyramid> {
    let p = dir.join("metadata.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let meta: DecompositionMeta = serde_json::from_str(&text)?;
    if meta.mode != "dwt" || meta.convention != CONVENTION {
        return Err(Error::Data(format!(
            "{} is not a {CONVENTION} pyramid",
            dir.display()
        )));
    }
    let approximation = read_positions(&dir.join("approximation.csv"))?;
    let details = (1..=meta.levels)
        .map(|l| read_positions(&dir.join(format!("detail_{l}.csv"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(WaveletPyramid {
        approximation,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{expert_rollout, sample_scenario, ScenarioConfig};
    use crate::wavelet::{decompose, reconstruct};

    #[test]
    fn episode_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = expert_rollout(&sample_scenario(4, &ScenarioConfig::default()).unwrap());
        write_episode(dir.path(), &log, 21).unwrap();
        let back = read_episode(dir.path()).unwrap();
        assert_eq!(back, log);
    }

    #[test]
    fn pyramid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let x = Array2::from_shape_fn((16, 2), |(i, j)| (i * i) as f64 * 0.3 - j as f64);
        let pyr = decompose(x.view(), 3).unwrap();
        let meta = write_pyramid(dir.path(), &pyr).unwrap();
        assert_eq!(meta.files.len(), 4);
        let back = read_pyramid(dir.path()).unwrap();
        assert_eq!(back, pyr);
        let err = (&reconstruct(&back).unwrap() - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12);
    }
}
