use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scopekit::experiment::{ExperimentConfig, LossConfig};
use scopekit::policy::checkpoint::Checkpoint;
use scopekit::policy::PolicyParams;
use scopekit::{Trajectory, Waypoint};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scopekit"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(args: &[&str]) -> (i32, String) {
    let out = run(args);
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, loss: LossConfig) -> PathBuf {
    let mut exp = ExperimentConfig::default();
    exp.network.hidden = [8, 8];
    exp.train.epochs = 2;
    exp.train.batch_size = 16;
    exp.train.warmup_epochs = 1;
    exp.train.loss = loss;
    let path = dir.join("config.json");
    fs::write(&path, exp.to_json()).unwrap();
    path
}

fn report_composite(dir: &Path) -> f64 {
    let text = fs::read_to_string(dir.join("report.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    row.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn help_documents_config_schema() {
    let out = ok(&["train", "--help"]);
    assert!(out.contains("train.loss.timenorm"));
    assert!(out.contains("EXIT CODES"));
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen", "--scenarios", "2", "--seed", "7", "--out", s(out)]);
    }
    for name in ["episode_00000/states.csv", "episode_00001/events.json", "episode_00001/observations.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn gen_with_no_scenarios_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen", "--scenarios", "0", "--seed", "1", "--out", s(dir.path())]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn malformed_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"plan": {"future_step": 80}}"#).unwrap();
    let (code, err) = exit_code(&[
        "gen", "--scenarios", "1", "--seed", "1", "--config", s(&cfg), "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("future_step"), "{err}");
}

fn write_trajectory(path: &Path, len: usize, f: impl Fn(f64) -> (f64, f64)) {
    let points = (0..len)
        .map(|i| {
            let (x, y) = f(i as f64 * 0.1);
            Waypoint::new(x, y, 0.0, 10.0, 0.0)
        })
        .collect();
    Trajectory::new(points, 0.1)
        .write_csv(fs::File::create(path).unwrap())
        .unwrap();
}

#[test]
fn decompose_round_trips_and_checks_divisibility() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("traj.csv");
    write_trajectory(&input, 80, |t| (10.0 * t, (1.3 * t).sin()));
    let out = dir.path().join("dwt");
    let stdout = ok(&["decompose", "--input", s(&input), "--levels", "3", "--out", s(&out), "--verify"]);
    let err: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max abs reconstruction error: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-10);
    for f in ["approximation.csv", "detail_1.csv", "detail_2.csv", "detail_3.csv", "metadata.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let (code, msg) = exit_code(&["decompose", "--input", s(&input), "--levels", "5", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code, 2);
    assert!(msg.contains("32"), "{msg}");
}

#[test]
fn constant_trajectory_has_zero_details() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.csv");
    write_trajectory(&input, 16, |_| (4.0, -1.0));
    let out = dir.path().join("dwt");
    ok(&["decompose", "--input", s(&input), "--levels", "2", "--out", s(&out)]);
    for l in 1..=2 {
        let text = fs::read_to_string(out.join(format!("detail_{l}.csv"))).unwrap();
        for row in text.lines().skip(1) {
            let v: Vec<f64> = row.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
            assert_eq!(v, vec![0.0, 0.0]);
        }
    }
}

#[test]
fn dwh_mode_writes_levels() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("traj.csv");
    write_trajectory(&input, 80, |t| (10.0 * t, 0.5 * t));
    let out = dir.path().join("dwh");
    let stdout = ok(&[
        "decompose", "--input", s(&input), "--levels", "3", "--mode", "dwh", "--horizon", "20",
        "--out", s(&out), "--verify",
    ]);
    assert!(stdout.contains("max abs level error"));
    for l in 1..=3 {
        let text = fs::read_to_string(out.join(format!("level_{l}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 21);
    }
}

#[test]
fn train_smoke_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--scenarios", "5", "--seed", "3", "--out", s(&data)]);
    let cfg = small_config(dir.path(), LossConfig::baseline());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let started = std::time::Instant::now();
    for out in [&a, &b] {
        ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(out)]);
    }
    assert!(started.elapsed().as_secs() < 120);
    for f in ["checkpoint.json", "training_log.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let log = fs::read_to_string(a.join("training_log.csv")).unwrap();
    assert!(log.starts_with("step,reg,cls,col,ds,total\n"));
}

#[test]
fn exclusive_schemes_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--scenarios", "1", "--seed", "3", "--out", s(&data)]);
    let cfg = dir.path().join("both.json");
    fs::write(&cfg, r#"{"train": {"loss": {"timenorm": true, "truncation": {"t_cut": 20}}}}"#).unwrap();
    let (code, err) = exit_code(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 2);
    assert!(err.contains("exclusive"), "{err}");
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen", "--scenarios", "2", "--seed", "3", "--out", s(&data)]);
    let cfg = dir.path().join("hot.json");
    fs::write(&cfg, r#"{"train": {"learning_rate": 1e300, "warmup_epochs": 0, "epochs": 2}}"#).unwrap();
    let out = dir.path().join("o");
    let (code, _) = exit_code(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    assert_eq!(code, 3);
    assert!(out.join("checkpoint.json").is_file());
}

#[test]
fn expert_checkpoint_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("expert.json");
    Checkpoint::expert(&ExperimentConfig::default()).save(&ck).unwrap();
    let out = dir.path().join("e");
    ok(&["eval", "--checkpoint", s(&ck), "--scenarios", "10", "--seed", "4", "--out", s(&out)]);
    assert!((report_composite(&out) - 1.0).abs() <= 1e-9);

    let flag = dir.path().join("f");
    ok(&["eval", "--expert", "--scenarios", "10", "--seed", "4", "--out", s(&flag)]);
    assert_eq!(fs::read(out.join("scores.csv")).unwrap(), fs::read(flag.join("scores.csv")).unwrap());
}

#[test]
fn zero_policy_scores_low_and_eval_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let exp = ExperimentConfig::default();
    let params = PolicyParams::init(&exp.policy_config(), 0).unwrap();
    let ck = dir.path().join("zero.json");
    Checkpoint::policy(&params, &exp, 0).save(&ck).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["eval", "--checkpoint", s(&ck), "--scenarios", "6", "--seed", "2", "--out", s(&a)]);
    ok(&["eval", "--checkpoint", s(&ck), "--scenarios", "6", "--seed", "2", "--out", s(&b), "--jobs", "4"]);
    assert!(report_composite(&a) <= 0.55);
    assert_eq!(fs::read(a.join("report.csv")).unwrap(), fs::read(b.join("report.csv")).unwrap());
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("broken.json");
    fs::write(&ck, "{\"format\": \"scopekit-checkpoint\", \"version\": 1").unwrap();
    let (code, _) = exit_code(&["eval", "--checkpoint", s(&ck), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 2);
}

#[test]
fn compare_ranks_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let exp = ExperimentConfig::default();
    let ck = dir.path().join("zero.json");
    Checkpoint::policy(&PolicyParams::init(&exp.policy_config(), 0).unwrap(), &exp, 0)
        .save(&ck)
        .unwrap();
    let (e, z, other) = (dir.path().join("e"), dir.path().join("z"), dir.path().join("x"));
    ok(&["eval", "--expert", "--scenarios", "4", "--seed", "1", "--out", s(&e)]);
    ok(&["eval", "--checkpoint", s(&ck), "--scenarios", "4", "--seed", "1", "--out", s(&z), "--name", "zero"]);
    ok(&["eval", "--expert", "--scenarios", "4", "--seed", "2", "--out", s(&other)]);

    let single = dir.path().join("single.csv");
    ok(&["compare", "--runs", s(&e), "--out", s(&single)]);
    assert_eq!(
        fs::read_to_string(&single).unwrap(),
        fs::read_to_string(e.join("report.csv")).unwrap()
    );

    let dup = dir.path().join("dup.csv");
    ok(&["compare", "--runs", s(&z), s(&z), "--out", s(&dup)]);
    let text = fs::read_to_string(&dup).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);

    let ranked = ok(&["compare", "--runs", s(&z), s(&e), "--out", s(&dir.path().join("r.csv"))]);
    assert!(ranked.lines().next().unwrap().contains("expert"), "{ranked}");

    let (code, _) = exit_code(&["compare", "--runs", s(&e), s(&other), "--out", s(&dir.path().join("m.csv"))]);
    assert_eq!(code, 2);
}
