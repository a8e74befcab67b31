//! Demonstration datasets and the imitation training loop.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, LossConfig, WeightMode};
use crate::losses::{
    closest_mode, collision_loss_grad, level_horizons, mode_score_grad, per_step_regression,
    scope_loss_grad, total_loss, weighted_mean, weighted_regression_grad, LossBreakdown,
    LossParts, ScopeComponents, StaticCircle,
};
use crate::observation::PlanConfig;
use crate::policy::{backward, forward, DetailTarget, OutputGrad, PolicyParams};
use crate::seed::rng_for;
use crate::sim::expert::relative_future;
use crate::sim::EpisodeLog;
use crate::trajectory::{fmt_real, Trajectory, CHANNELS};
use crate::wavelet::{decompose, dwh_decompose};
use crate::weights::timenorm_weights;

/// One supervised example taken from an expert log at `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub episode: usize,
    pub scenario_seed: u64,
    pub step: usize,
    pub features: Vec<f64>,
    /// Expert states `step+1 ..= step+T` relative to the state at `step`.
    pub target: Trajectory,
    /// Obstacles visible at `step`, in the same relative frame, with the
    /// ego radius folded into `radius_sum`.
    pub obstacles: Vec<StaticCircle>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub plan: PlanConfig,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One sample every `stride` steps whose whole target lies inside the episode,
/// ordered by (episode, step).
pub fn build_dataset(episodes: &[EpisodeLog], plan: &PlanConfig, stride: usize) -> Result<Dataset> {
    if episodes.is_empty() {
        return Err(Error::Data("no episodes to build a dataset from".into()));
    }
    if stride == 0 {
        return Err(Error::Parameter("stride must be positive".into()));
    }
    let horizon = plan.future_steps;
    let mut samples = Vec::new();
    for (episode, log) in episodes.iter().enumerate() {
        if let Some(f) = &log.failure {
            return Err(Error::Data(format!("episode {episode} is truncated: {f}")));
        }
        let dt = log.scenario.world.dt;
        let ego_radius = log.scenario.world.ego_radius;
        for step in (0..log.states.len()).step_by(stride) {
            if step + horizon >= log.states.len() {
                break;
            }
            let origin = log.states[step];
            let obs = log.observation(step, plan.history_steps);
            let obstacles = obs
                .visible_obstacles
                .iter()
                .map(|o| StaticCircle {
                    center: [o.center[0] - origin.x, o.center[1] - origin.y],
                    radius_sum: o.radius + ego_radius,
                })
                .collect();
            samples.push(Sample {
                episode,
                scenario_seed: log.scenario.seed,
                step,
                features: crate::policy::featurize(&obs),
                target: relative_future(&log.states[step + 1..=step + horizon], &origin, dt),
                obstacles,
            });
        }
    }
    Ok(Dataset {
        plan: plan.clone(),
        samples,
    })
}

/// A sample with targets flattened and decomposed for one loss configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub features: Vec<f64>,
    /// Row-major `T×6`.
    pub target: Vec<f64>,
    pub obstacles: Vec<StaticCircle>,
    pub components: Option<ScopeComponents>,
    pub horizons: Vec<usize>,
}

/// The training objective for one experiment.
#[derive(Debug, Clone)]
pub struct Objective {
    pub plan: PlanConfig,
    pub loss: LossConfig,
    weight_mode: WeightMode,
    static_weights: Option<Vec<f64>>,
}

/// Loss value, parameter gradient and the weights used, for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEval {
    pub breakdown: LossBreakdown,
    pub grad: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Objective {
    pub fn new(plan: &PlanConfig, loss: &LossConfig) -> Result<Self> {
        loss.validate(plan)?;
        Ok(Self {
            plan: plan.clone(),
            loss: loss.clone(),
            weight_mode: loss.weight_mode()?,
            static_weights: loss.static_weights(plan.future_steps)?.map(|s| s.weights),
        })
    }

    /// Step at which the closest mode is chosen: the last supervised step.
    fn selection_step(&self) -> usize {
        self.static_weights
            .as_ref()
            .and_then(|w| w.iter().rposition(|v| *v != 0.0))
            .unwrap_or(self.plan.future_steps - 1)
    }

    pub fn prepare(&self, sample: &Sample) -> Result<PreparedSample> {
        let t = self.plan.future_steps;
        if sample.target.len() != t {
            return Err(Error::Shape(format!(
                "target has {} steps, expected {t}",
                sample.target.len()
            )));
        }
        let target: Vec<f64> = sample.target.points.iter().flat_map(|p| p.channels()).collect();
        let (components, horizons) = match self.loss.detail {
            None => (None, Vec::new()),
            Some(d) => {
                let positions = sample.target.positions();
                let levels = self.plan.wavelet_levels;
                let h = self.plan.ds_horizon;
                match d.target {
                    DetailTarget::Dwt => {
                        let pyr = decompose(positions.view(), levels)?;
                        let lens: Vec<usize> = pyr.details.iter().map(|d| d.nrows()).collect();
                        (Some(ScopeComponents::from(&pyr)), level_horizons(h, &lens))
                    }
                    DetailTarget::Dwh => {
                        let stack = dwh_decompose(positions.view(), levels, h)?;
                        let lens = stack.levels.iter().map(|d| d.nrows()).collect();
                        (Some(ScopeComponents::from(&stack)), lens)
                    }
                }
            }
        };
        Ok(PreparedSample {
            features: sample.features.clone(),
            target,
            obstacles: sample.obstacles.clone(),
            components,
            horizons,
        })
    }

    /// Mean loss over `batch` and its exact gradient. Time-normalised weights
    /// come from this batch unless `frozen_weights` is given; either way they
    /// are constants for differentiation.
    pub fn evaluate(
        &self,
        params: &PolicyParams,
        batch: &[&PreparedSample],
        frozen_weights: Option<&[f64]>,
    ) -> Result<BatchEval> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let t_len = self.plan.future_steps;
        let select_at = self.selection_step();
        let passes = batch
            .iter()
            .map(|s| forward(params, &s.features))
            .collect::<Result<Vec<_>>>()?;
        let chosen: Vec<usize> = passes
            .iter()
            .zip(batch)
            .map(|((out, _), s)| closest_mode(out.modes_iter(), &s.target, select_at))
            .collect();
        let per_step: Vec<Vec<f64>> = passes
            .iter()
            .zip(batch)
            .zip(&chosen)
            .map(|(((out, _), s), m)| per_step_regression(out.mode(*m), &s.target))
            .collect();
        let weights = match (frozen_weights, &self.static_weights, self.weight_mode) {
            (Some(w), _, _) => w.to_vec(),
            (None, Some(w), _) => w.clone(),
            (None, None, WeightMode::Timenorm(eps)) => {
                if per_step.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("per-step regression loss".into()));
                }
                timenorm_weights(&per_step, eps)?.weights
            }
            (None, None, _) => unreachable!("static schemes always carry weights"),
        };
        if weights.len() != t_len {
            return Err(Error::Shape(format!(
                "{} weights for {t_len} steps",
                weights.len()
            )));
        }

        let terms = &self.loss.terms;
        let inv_b = 1.0 / batch.len() as f64;
        let coef = |c: Option<f64>| c.unwrap_or(0.0) * inv_b;
        let mut parts = LossParts {
            per_step_reg: vec![0.0; t_len],
            ..LossParts::default()
        };
        let mut grad = vec![0.0; params.len()];
        for ((((out, acts), s), m), steps) in passes.iter().zip(batch).zip(&chosen).zip(&per_step) {
            let mut up = OutputGrad::zeros_like(out);
            let n = t_len * CHANNELS;
            let mode = out.mode(*m);

            parts.reg += weighted_mean(steps, &weights);
            for (acc, v) in parts.per_step_reg.iter_mut().zip(steps) {
                *acc += v;
            }
            if terms.reg.is_some() {
                let g = weighted_regression_grad(mode, &s.target, &weights);
                for (u, v) in up.trajectories[m * n..(m + 1) * n].iter_mut().zip(g) {
                    *u += coef(terms.reg) * v;
                }
            }

            let (cls, gs) = mode_score_grad(&out.scores, *m)?;
            parts.cls += cls;
            if terms.cls.is_some() {
                for (u, v) in up.scores.iter_mut().zip(gs) {
                    *u += coef(terms.cls) * v;
                }
            }

            let positions: Vec<[f64; 2]> =
                mode.chunks_exact(CHANNELS).map(|c| [c[0], c[1]]).collect();
            let (col, gc) =
                collision_loss_grad(&positions, &s.obstacles, self.loss.collision_tolerance);
            parts.col += col;
            if terms.col.is_some() {
                for (t, g) in gc.iter().enumerate() {
                    up.trajectories[m * n + t * CHANNELS] += coef(terms.col) * g[0];
                    up.trajectories[m * n + t * CHANNELS + 1] += coef(terms.col) * g[1];
                }
            }

            if let (Some(d), Some(target)) = (self.loss.detail, &s.components) {
                let pred = out.scope_components(d.target, self.plan.ds_horizon);
                let (ds, mut gd) = scope_loss_grad(&pred, target, &s.horizons)?;
                parts.ds += ds;
                if terms.ds.is_some() {
                    let k = coef(terms.ds);
                    gd.details.iter_mut().for_each(|a| *a *= k);
                    if let Some(a) = gd.approximation.as_mut() {
                        *a *= k;
                    }
                    up.add_scope_grad(d.target, &gd);
                }
            }

            backward(params, acts, &up, &mut grad);
        }
        parts.reg *= inv_b;
        parts.cls *= inv_b;
        parts.col *= inv_b;
        parts.ds *= inv_b;
        parts.per_step_reg.iter_mut().for_each(|v| *v *= inv_b);
        Ok(BatchEval {
            breakdown: total_loss(&parts, terms),
            grad,
            weights,
        })
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub reg: f64,
    pub cls: f64,
    pub col: f64,
    pub ds: f64,
    pub total: f64,
}

pub fn write_training_log<W: Write>(rows: &[LogRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["step", "reg", "cls", "col", "ds", "total"])?;
    for r in rows {
        wtr.write_record([
            r.step.to_string(),
            fmt_real(r.reg),
            fmt_real(r.cls),
            fmt_real(r.col),
            fmt_real(r.ds),
            fmt_real(r.total),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<training log>", e))
}

/// Mean of `field` per epoch.
pub fn epoch_means(rows: &[LogRow], field: impl Fn(&LogRow) -> f64) -> Vec<f64> {
    let epochs = rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    let mut sums = vec![(0.0, 0usize); epochs];
    for r in rows {
        sums[r.epoch].0 += field(r);
        sums[r.epoch].1 += 1;
    }
    sums.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Result of a training run. When `abort` is set, `params` are the last
/// parameters for which every value was finite.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub log: Vec<LogRow>,
    pub steps: u64,
    pub abort: Option<String>,
}

/// Learning rate at optimiser step `step` (0-based) with a linear warm-up.
pub fn learning_rate(base: f64, step: u64, warmup_steps: u64) -> f64 {
    if warmup_steps == 0 {
        base
    } else {
        base * ((step + 1) as f64 / warmup_steps as f64).min(1.0)
    }
}

pub fn train_run(exp: &ExperimentConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let params = PolicyParams::init(&exp.policy_config(), exp.seed)?;
    train_from(exp, dataset, params)
}

/// Trains from the given starting parameters. Deterministic in
/// `(exp, dataset, params)`.
pub fn train_from(exp: &ExperimentConfig, dataset: &Dataset, mut params: PolicyParams) -> Result<TrainOutcome> {
    exp.validate()?;
    let cfg = &exp.train;
    if dataset.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    if cfg.batch_size > dataset.len() {
        return Err(Error::Data(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size,
            dataset.len()
        )));
    }
    if dataset.plan != exp.plan {
        return Err(Error::Config("dataset was built with a different plan config".into()));
    }
    let objective = Objective::new(&exp.plan, &cfg.loss)?;
    let prepared = dataset
        .samples
        .iter()
        .map(|s| objective.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    let batches_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let warmup = (cfg.warmup_epochs * batches_per_epoch) as u64;
    let mut adam = Adam::new(params.len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut log = Vec::new();
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(exp.seed, "shuffle", epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|i| &prepared[*i]).collect();
            let eval = match objective.evaluate(&params, &batch, None) {
                Ok(e) => e,
                Err(Error::NonFinite(msg)) | Err(Error::Data(msg)) => {
                    return Ok(aborted(params, log, step, format!("step {step}: {msg}")))
                }
                Err(e) => return Err(e),
            };
            let b = &eval.breakdown;
            if !b.total.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
                let msg = format!("non-finite loss or gradient at step {step}");
                return Ok(aborted(params, log, step, msg));
            }
            log.push(LogRow {
                step,
                epoch,
                reg: b.reg,
                cls: b.cls,
                col: b.col,
                ds: b.ds,
                total: b.total,
            });
            let mut grad = eval.grad;
            if let Some(max) = cfg.max_grad_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    grad.iter_mut().for_each(|g| *g *= max / norm);
                }
            }
            let mut next = params.values.clone();
            adam.step(&mut next, &grad, learning_rate(cfg.learning_rate, step, warmup));
            step += 1;
            if next.iter().any(|v| !v.is_finite()) {
                let msg = format!("non-finite parameters after step {step}");
                return Ok(aborted(params, log, step - 1, msg));
            }
            params.values = next;
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        steps: step,
        abort: None,
    })
}

fn aborted(params: PolicyParams, log: Vec<LogRow>, steps: u64, msg: String) -> TrainOutcome {
    TrainOutcome {
        params,
        log,
        steps,
        abort: Some(msg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{expert_rollout, sample_scenario};

    fn small_experiment() -> ExperimentConfig {
        let mut exp = ExperimentConfig::default();
        exp.plan.history_steps = 4;
        exp.rollout.history_steps = 4;
        exp.network.hidden = [8, 8];
        exp.train.batch_size = 8;
        exp.train.epochs = 2;
        exp
    }

    fn episodes(n: u64, exp: &ExperimentConfig) -> Vec<EpisodeLog> {
        (0..n)
            .map(|s| expert_rollout(&sample_scenario(s, &exp.scenario).unwrap()))
            .collect()
    }

    #[test]
    fn sample_count_for_one_episode() {
        let exp = small_experiment();
        let ds = build_dataset(&episodes(1, &exp), &exp.plan, 10).unwrap();
        assert_eq!(ds.len(), 22);
        assert_eq!(ds.samples.last().unwrap().step, 210);
    }

    #[test]
    fn stride_equal_to_episode_gives_one_sample() {
        let exp = small_experiment();
        let ds = build_dataset(&episodes(3, &exp), &exp.plan, 300).unwrap();
        assert_eq!(ds.len(), 3);
    }

    #[test]
    fn duplicated_episodes_double_the_count() {
        let exp = small_experiment();
        let mut eps = episodes(1, &exp);
        eps.push(eps[0].clone());
        let ds = build_dataset(&eps, &exp.plan, 10).unwrap();
        assert_eq!(ds.len(), 44);
        assert_eq!(ds.samples[0].target, ds.samples[22].target);
    }

    #[test]
    fn empty_input_is_data_error() {
        let exp = small_experiment();
        assert!(matches!(build_dataset(&[], &exp.plan, 10), Err(Error::Data(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut exp = small_experiment();
        exp.train.learning_rate = 0.0;
        let ds = build_dataset(&episodes(2, &exp), &exp.plan, 20).unwrap();
        let init = PolicyParams::init(&exp.policy_config(), exp.seed).unwrap();
        let out = train_run(&exp, &ds).unwrap();
        assert_eq!(out.params.values, init.values);
        assert!(out.steps > 0);
    }

    #[test]
    fn training_is_deterministic() {
        let exp = small_experiment();
        let ds = build_dataset(&episodes(2, &exp), &exp.plan, 20).unwrap();
        let a = train_run(&exp, &ds).unwrap();
        let b = train_run(&exp, &ds).unwrap();
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn timenorm_weights_come_from_the_batch_only() {
        let mut exp = small_experiment();
        exp.train.loss = LossConfig::timenorm();
        let ds = build_dataset(&episodes(2, &exp), &exp.plan, 20).unwrap();
        let obj = Objective::new(&exp.plan, &exp.train.loss).unwrap();
        let prep: Vec<PreparedSample> = ds.samples.iter().map(|s| obj.prepare(s).unwrap()).collect();
        let params = PolicyParams::init(&exp.policy_config(), 0).unwrap();
        let batch: Vec<&PreparedSample> = prep[..4].iter().collect();
        let a = obj.evaluate(&params, &batch, None).unwrap();
        let mut others = prep.clone();
        others[4..].reverse();
        let batch: Vec<&PreparedSample> = others[..4].iter().collect();
        let b = obj.evaluate(&params, &batch, None).unwrap();
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn learning_rate_warms_up_linearly() {
        assert_eq!(learning_rate(1.0, 0, 4), 0.25);
        assert_eq!(learning_rate(1.0, 3, 4), 1.0);
        assert_eq!(learning_rate(1.0, 10, 4), 1.0);
        assert_eq!(learning_rate(0.5, 0, 0), 0.5);
    }
}
