use scopekit::experiment::{ExperimentConfig, LossConfig, TimenormConfig, TruncationConfig};
use scopekit::policy::checkpoint::Checkpoint;
use scopekit::policy::{DecoderMode, DetailTarget};
use scopekit::sim::{closed_loop_rollout, expert_logs, sample_scenarios};
use scopekit::training::{build_dataset, epoch_means, train_run, Dataset};
use scopekit::Error;

fn setup(loss: LossConfig, episodes: usize) -> (ExperimentConfig, Dataset) {
    let mut exp = ExperimentConfig::default();
    exp.network.hidden = [16, 16];
    exp.train.epochs = 6;
    exp.train.batch_size = 16;
    exp.train.warmup_epochs = 1;
    exp.train.loss = loss;
    let scenarios = sample_scenarios(21, "gen", episodes, &exp.scenario).unwrap();
    let logs = expert_logs(&scenarios, 1).unwrap();
    let data = build_dataset(&logs, &exp.plan, exp.train.dataset_stride).unwrap();
    (exp, data)
}

#[test]
fn baseline_regression_loss_falls() {
    let (mut exp, data) = setup(LossConfig::baseline(), 8);
    exp.train.learning_rate = 1e-2;
    let out = train_run(&exp, &data).unwrap();
    assert!(out.abort.is_none());
    let reg = epoch_means(&out.log, |r| r.reg);
    assert_eq!(reg.len(), exp.train.epochs);
    assert!(reg[reg.len() - 1] < 0.5 * reg[0], "{reg:?}");
}

#[test]
fn every_variant_trains_and_logs_consistent_totals() {
    for loss in [
        LossConfig::truncation(20),
        LossConfig::timedecay(std::f64::consts::E, 1.0),
        LossConfig::timenorm(),
        LossConfig::detail(DecoderMode::Mdd, DetailTarget::Dwt),
        LossConfig::detail(DecoderMode::Idd, DetailTarget::Dwh),
    ] {
        let (mut exp, data) = setup(loss, 3);
        exp.train.epochs = 2;
        let out = train_run(&exp, &data).unwrap();
        assert!(out.abort.is_none());
        for r in &out.log {
            assert!((r.total - (r.reg + r.cls + r.col + r.ds)).abs() < 1e-12);
        }
    }
}

#[test]
fn runs_repeat_bit_for_bit_and_checkpoints_replay() {
    let (mut exp, data) = setup(LossConfig::timenorm(), 3);
    exp.train.epochs = 2;
    let a = train_run(&exp, &data).unwrap();
    let b = train_run(&exp, &data).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    Checkpoint::policy(&a.params, &exp, a.steps).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.params().unwrap(), Some(a.params.clone()));

    let scenario = &sample_scenarios(5, "eval", 1, &exp.scenario).unwrap()[0];
    let direct = scopekit::policy::LearnedPlanner { params: a.params };
    assert_eq!(
        closed_loop_rollout(&direct, scenario, &exp.rollout),
        closed_loop_rollout(loaded.planner().unwrap().as_ref(), scenario, &exp.rollout)
    );
}

#[test]
fn different_seeds_give_different_parameters() {
    let (mut exp, data) = setup(LossConfig::baseline(), 2);
    exp.train.epochs = 1;
    let a = train_run(&exp, &data).unwrap();
    exp.seed += 1;
    let b = train_run(&exp, &data).unwrap();
    assert_ne!(a.params.values, b.params.values);
}

#[test]
fn diverging_run_keeps_last_good_parameters() {
    let (mut exp, data) = setup(LossConfig::baseline(), 2);
    exp.train.learning_rate = 1e300;
    exp.train.warmup_epochs = 0;
    let out = train_run(&exp, &data).unwrap();
    assert!(out.abort.is_some());
    assert!(out.params.values.iter().all(|v| v.is_finite()));
}

#[test]
fn oversized_batch_is_rejected() {
    let (mut exp, data) = setup(LossConfig::baseline(), 1);
    exp.train.batch_size = data.len() + 1;
    assert!(matches!(train_run(&exp, &data), Err(Error::Data(_))));
}

#[test]
fn exclusive_weight_schemes_are_rejected() {
    let mut loss = LossConfig::truncation(20);
    loss.timenorm = TimenormConfig::Enabled(true);
    let (mut exp, data) = setup(LossConfig::baseline(), 1);
    exp.train.loss = loss;
    let err = train_run(&exp, &data).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("exclusive")), "{err}");
    assert!(LossConfig {
        truncation: Some(TruncationConfig { t_cut: 20 }),
        ..LossConfig::baseline()
    }
    .weight_mode()
    .is_ok());
}
