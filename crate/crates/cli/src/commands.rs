use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use scopekit::eval::{
    compare_runs, evaluate_planner, read_report_configs, read_scores, write_scores, RunResult,
};
use scopekit::experiment::ExperimentConfig;
use scopekit::policy::checkpoint::{Checkpoint, CheckpointKind};
use scopekit::sim::{expert_logs, sample_scenarios};
use scopekit::store::{self, create_dir, episode_dir_name};
use scopekit::training::{build_dataset, train_run, write_training_log};
use scopekit::trajectory::Trajectory;
use scopekit::wavelet::{decompose as dwt, dwh_decompose, max_abs_error, reconstruct};
use scopekit::Error;

use crate::manifest::Manifest;
use crate::{CompareArgs, DecomposeArgs, DecomposeMode, EvalArgs, GenArgs, TrainArgs};

pub const USAGE: u8 = 2;
pub const RUNTIME: u8 = 3;

/// Scenario seed stream for `gen`.
pub const GEN_STREAM: &str = "gen";
/// Scenario seed stream for `eval`.
pub const EVAL_STREAM: &str = "eval";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: RUNTIME,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_usage() || matches!(e, Error::Io { .. }) {
            USAGE
        } else {
            RUNTIME
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p)
            .map_err(|e| CliError::usage(format!("{}: {e}", p.display()))),
        None => Ok(ExperimentConfig::default()),
    }
}

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).display().to_string()
}

pub fn gen(a: &GenArgs) -> CliResult {
    let started = Instant::now();
    let cfg = load_config(a.config.as_deref())?;
    create_dir(&a.out)?;
    if a.scenarios == 0 {
        eprintln!("warning: --scenarios 0 writes an empty dataset");
    }
    let scenarios = sample_scenarios(a.seed, GEN_STREAM, a.scenarios, &cfg.scenario)?;
    let logs = expert_logs(&scenarios, a.jobs)?;
    let mut manifest = Manifest::new("gen", &cfg.to_json(), Some(a.seed));
    if let Some(c) = &a.config {
        manifest = manifest.input(c);
    }
    for (i, log) in logs.iter().enumerate() {
        let name = episode_dir_name(i);
        store::write_episode(&a.out.join(&name), log, cfg.plan.history_steps)?;
        manifest.outputs.push(name);
    }
    manifest.write(&a.out, started)?;
    println!("wrote {} expert episodes to {}", logs.len(), a.out.display());
    Ok(())
}

pub fn decompose(a: &DecomposeArgs) -> CliResult {
    let started = Instant::now();
    let traj = Trajectory::read_csv(open(&a.input)?)?;
    let problems = traj.validate();
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(ToString::to_string).collect();
        return Err(CliError::usage(format!(
            "{}: invalid trajectory: {}",
            a.input.display(),
            list.join("; ")
        )));
    }
    let positions = traj.positions();
    let args_json = serde_json::json!({
        "levels": a.levels,
        "mode": format!("{:?}", a.mode).to_lowercase(),
        "horizon": a.horizon,
    })
    .to_string();
    let mut manifest = Manifest::new("decompose", &args_json, None).input(&a.input);
    let meta = match a.mode {
        DecomposeMode::Dwt => {
            if a.horizon.is_some() {
                return Err(CliError::usage("--horizon only applies to --mode dwh"));
            }
            let pyr = dwt(positions.view(), a.levels)?;
            let meta = store::write_pyramid(&a.out, &pyr)?;
            if a.verify {
                let back = store::read_pyramid(&a.out)?;
                let rec = reconstruct(&back)?;
                let err = max_abs_error(rec.view(), positions.view());
                println!("max abs reconstruction error: {err:.3e}");
            }
            meta
        }
        DecomposeMode::Dwh => {
            let horizon = a
                .horizon
                .ok_or_else(|| CliError::usage("--mode dwh requires --horizon"))?;
            let stack = dwh_decompose(positions.view(), a.levels, horizon)?;
            let meta = store::write_stack(&a.out, &stack, positions.nrows())?;
            if a.verify {
                let mut err: f64 = 0.0;
                for (file, expect) in meta.files.iter().zip(&stack.levels) {
                    let level = store::read_positions(&a.out.join(file))?;
                    err = err.max(max_abs_error(level.view(), expect.view()));
                }
                println!("max abs level error: {err:.3e}");
            }
            meta
        }
    };
    manifest.outputs.extend(meta.files.iter().cloned());
    manifest.outputs.push("metadata.json".into());
    manifest.write(&a.out, started)?;
    println!("wrote {} component files to {}", meta.files.len(), a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> CliResult {
    let started = Instant::now();
    let cfg = load_config(Some(&a.config))?;
    let episodes = store::read_episodes(&a.data)?;
    if episodes.is_empty() {
        return Err(CliError::usage(format!(
            "{} contains no episodes",
            a.data.display()
        )));
    }
    let dataset = build_dataset(&episodes, &cfg.plan, cfg.train.dataset_stride)?;
    let outcome = train_run(&cfg, &dataset)?;
    create_dir(&a.out)?;
    let ck = Checkpoint::policy(&outcome.params, &cfg, outcome.steps);
    ck.save(&a.out.join("checkpoint.json"))?;
    write_training_log(&outcome.log, create(&a.out.join("training_log.csv"))?)?;
    let mut manifest = Manifest::new("train", &cfg.to_json(), Some(cfg.seed))
        .input(&a.config)
        .input(&a.data);
    manifest.outputs = vec!["checkpoint.json".into(), "training_log.csv".into()];
    manifest.write(&a.out, started)?;
    if let Some(msg) = outcome.abort {
        return Err(CliError::runtime(format!(
            "training aborted ({msg}); last good checkpoint written to {}",
            a.out.join("checkpoint.json").display()
        )));
    }
    println!(
        "trained {} parameters for {} steps on {} samples; checkpoint in {}",
        outcome.params.len(),
        outcome.steps,
        dataset.len(),
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let started = Instant::now();
    let (ck, input) = match &a.checkpoint {
        Some(p) => (
            Checkpoint::load(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?,
            Some(p.clone()),
        ),
        None => (Checkpoint::expert(&load_config(a.config.as_deref())?), a.config.clone()),
    };
    let exp = &ck.experiment;
    let label = a.name.clone().unwrap_or_else(|| match ck.kind {
        CheckpointKind::Expert => "expert".into(),
        CheckpointKind::Policy { .. } => exp.train.loss.label(),
    });
    let planner = ck.planner()?;
    let scenarios = sample_scenarios(a.seed, EVAL_STREAM, a.scenarios, &exp.scenario)?;
    let results = evaluate_planner(planner.as_ref(), &scenarios, &exp.rollout, a.jobs)?;

    create_dir(&a.out)?;
    let scores: Vec<(u64, _)> = results.iter().map(|(l, s)| (l.scenario.seed, *s)).collect();
    write_scores(&scores, create(&a.out.join("scores.csv"))?)?;
    let report = compare_runs(&[RunResult {
        config: label.clone(),
        scores,
    }])?;
    report.write_csv(create(&a.out.join("report.csv"))?)?;

    let mut manifest = Manifest::new("eval", &ck.to_json(), Some(a.seed));
    if let Some(p) = &input {
        manifest = manifest.input(p);
    }
    manifest.outputs = vec!["report.csv".into(), "scores.csv".into()];
    if a.write_logs {
        let dir = a.out.join("episodes");
        for (i, (log, _)) in results.iter().enumerate() {
            let d = dir.join(episode_dir_name(i));
            store::write_episode(&d, log, exp.plan.history_steps)?;
            manifest.outputs.push(relative(&a.out, &d));
        }
    }
    manifest.write(&a.out, started)?;

    let row = &report.rows[0];
    let failed = results.iter().filter(|(l, _)| l.failure.is_some()).count();
    println!(
        "{label}: mean composite {:.4} (std {:.4}) over {} scenarios",
        row.composite.mean, row.composite.std, row.scenarios
    );
    if failed > 0 {
        eprintln!("warning: {failed} rollouts aborted and were scored as failures");
    }
    Ok(())
}

pub fn compare(a: &CompareArgs) -> CliResult {
    let mut runs = Vec::new();
    for dir in &a.runs {
        let names = read_report_configs(open(&dir.join("report.csv"))?)?;
        let config = names
            .into_iter()
            .next()
            .unwrap_or_else(|| dir.display().to_string());
        let scores = read_scores(open(&dir.join("scores.csv"))?)?;
        runs.push(RunResult { config, scores });
    }
    let report = compare_runs(&runs).map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    report.write_csv(create(&a.out)?)?;
    for (rank, i) in report.ranking().into_iter().enumerate() {
        let r = &report.rows[i];
        println!(
            "{}. {} {:.4} ± {:.4}",
            rank + 1,
            r.config,
            r.composite.mean,
            r.composite.std
        );
    }
    Ok(())
}
