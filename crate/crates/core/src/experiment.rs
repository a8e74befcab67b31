//! Experiment configuration shared by data generation, training and evaluation.
//!
//! Every field has a default, so `{}` is a complete config. Unknown keys are
//! rejected.
//!
//! ```json
//! {
//!   "seed": 0,
//!   "plan": { "future_steps": 80, "history_steps": 21, "mode_count": 3,
//!             "wavelet_levels": 3, "ds_horizon": 20, "dt": 0.1 },
//!   "network": { "hidden": [64, 64], "output_scale": [10, 10, 1, 1, 5, 5] },
//!   "scenario": { "episode_steps": 300, "v_ref": 10.0, "...": "..." },
//!   "rollout": { "replan_interval": 10, "history_steps": 21 },
//!   "train": {
//!     "batch_size": 32, "epochs": 25, "learning_rate": 0.001,
//!     "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
//!     "warmup_epochs": 3, "max_grad_norm": null, "dataset_stride": 10,
//!     "loss": {
//!       "truncation": null, "timedecay": null, "timenorm": false,
//!       "detail": null,
//!       "terms": { "reg": 1.0, "cls": 1.0, "col": 1.0, "ds": 1.0 },
//!       "collision_tolerance": 0.0
//!     }
//!   }
//! }
//! ```
//!
//! `truncation` takes `{"t_cut": 20}`, `timedecay` takes `{"l": 2.718, "p": 1}`,
//! `timenorm` takes `true` or `{"eps_guard": 1e-6}`, and `detail` takes
//! `{"decoder": "mdd" | "idd", "target": "dwt" | "dwh"}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossTerms;
use crate::observation::PlanConfig;
use crate::policy::{DecoderMode, DetailTarget, NetworkConfig, PolicyConfig};
use crate::sim::{RolloutConfig, ScenarioConfig};
use crate::weights::{
    decay_weights, truncation_weights, GpParams, WeightSchedule, DEFAULT_EPS_GUARD,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub t_cut: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayConfig {
    pub l: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimenormConfig {
    Enabled(bool),
    Guarded { eps_guard: f64 },
}

impl Default for TimenormConfig {
    fn default() -> Self {
        Self::Enabled(false)
    }
}

impl TimenormConfig {
    pub fn eps_guard(&self) -> Option<f64> {
        match *self {
            Self::Enabled(false) => None,
            Self::Enabled(true) => Some(DEFAULT_EPS_GUARD),
            Self::Guarded { eps_guard } => Some(eps_guard),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetailConfig {
    pub decoder: DecoderMode,
    pub target: DetailTarget,
}

/// Resolved per-timestep weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    Uniform,
    Truncation(usize),
    Decay(GpParams),
    Timenorm(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub truncation: Option<TruncationConfig>,
    pub timedecay: Option<DecayConfig>,
    pub timenorm: TimenormConfig,
    pub detail: Option<DetailConfig>,
    pub terms: LossTerms,
    pub collision_tolerance: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            truncation: None,
            timedecay: None,
            timenorm: TimenormConfig::default(),
            detail: None,
            terms: LossTerms::default(),
            collision_tolerance: 0.0,
        }
    }
}

impl LossConfig {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn truncation(t_cut: usize) -> Self {
        Self {
            truncation: Some(TruncationConfig { t_cut }),
            ..Self::default()
        }
    }

    pub fn timedecay(l: f64, p: f64) -> Self {
        Self {
            timedecay: Some(DecayConfig { l, p }),
            ..Self::default()
        }
    }

    pub fn timenorm() -> Self {
        Self {
            timenorm: TimenormConfig::Enabled(true),
            ..Self::default()
        }
    }

    pub fn detail(decoder: DecoderMode, target: DetailTarget) -> Self {
        Self {
            detail: Some(DetailConfig { decoder, target }),
            ..Self::default()
        }
    }

    pub fn weight_mode(&self) -> Result<WeightMode> {
        let mut active = Vec::new();
        if let Some(t) = self.truncation {
            active.push(("truncation", WeightMode::Truncation(t.t_cut)));
        }
        if let Some(d) = self.timedecay {
            active.push(("timedecay", WeightMode::Decay(GpParams::new(d.l, d.p))));
        }
        if let Some(eps) = self.timenorm.eps_guard() {
            active.push(("timenorm", WeightMode::Timenorm(eps)));
        }
        match active.len() {
            0 => Ok(WeightMode::Uniform),
            1 => Ok(active[0].1),
            _ => Err(Error::Config(format!(
                "weight schemes are exclusive, found {}",
                active.iter().map(|a| a.0).collect::<Vec<_>>().join(" and ")
            ))),
        }
    }

    /// Static schedule for the given horizon; `None` for time normalisation,
    /// whose weights come from each batch.
    pub fn static_weights(&self, horizon: usize) -> Result<Option<WeightSchedule>> {
        Ok(match self.weight_mode()? {
            WeightMode::Uniform => Some(WeightSchedule::uniform(horizon)),
            WeightMode::Truncation(t) => Some(truncation_weights(t, horizon)?),
            WeightMode::Decay(gp) => Some(decay_weights(horizon, &gp)?),
            WeightMode::Timenorm(_) => None,
        })
    }

    pub fn validate(&self, plan: &PlanConfig) -> Result<()> {
        match self.weight_mode()? {
            WeightMode::Truncation(t) if t == 0 || t > plan.future_steps => {
                return Err(Error::Config(format!(
                    "t_cut must lie in 1..={}, got {t}",
                    plan.future_steps
                )))
            }
            WeightMode::Decay(gp) => gp.validate().map_err(|e| Error::Config(e.to_string()))?,
            WeightMode::Timenorm(eps) if !(eps > 0.0 && eps.is_finite()) => {
                return Err(Error::Config("eps_guard must be positive".into()))
            }
            _ => {}
        }
        if let Some(d) = self.detail {
            if d.decoder == DecoderMode::Plain {
                return Err(Error::Config(
                    "detail supervision needs an mdd or idd decoder".into(),
                ));
            }
            if plan.wavelet_levels == 0 {
                return Err(Error::Config(
                    "detail supervision needs wavelet_levels >= 1".into(),
                ));
            }
        }
        let t = &self.terms;
        for (name, c) in [("reg", t.reg), ("cls", t.cls), ("col", t.col), ("ds", t.ds)] {
            if let Some(c) = c {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(Error::Config(format!("{name} coefficient must be >= 0")));
                }
            }
        }
        if !(self.collision_tolerance.is_finite() && self.collision_tolerance >= 0.0) {
            return Err(Error::Config("collision_tolerance must be >= 0".into()));
        }
        Ok(())
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        let weight = match self.weight_mode() {
            Ok(WeightMode::Uniform) => "baseline".to_string(),
            Ok(WeightMode::Truncation(t)) => format!("truncation-h{t}"),
            Ok(WeightMode::Decay(_)) => "timedecay".to_string(),
            Ok(WeightMode::Timenorm(_)) => "timenorm".to_string(),
            Err(_) => "invalid".to_string(),
        };
        match self.detail {
            None => weight,
            Some(d) => {
                let dec = match d.decoder {
                    DecoderMode::Plain => "plain",
                    DecoderMode::Mdd => "mdd",
                    DecoderMode::Idd => "idd",
                };
                let tgt = match d.target {
                    DetailTarget::Dwt => "dwt",
                    DetailTarget::Dwh => "dwh",
                };
                if weight == "baseline" {
                    format!("{dec}+{tgt}")
                } else {
                    format!("{weight}+{dec}+{tgt}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Epochs of linear learning-rate ramp before the constant phase.
    pub warmup_epochs: usize,
    pub max_grad_norm: Option<f64>,
    /// Steps between consecutive samples taken from one episode.
    pub dataset_stride: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 25,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_epochs: 3,
            max_grad_norm: None,
            dataset_stride: 10,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, plan: &PlanConfig) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.dataset_stride == 0 {
            return Err(Error::Config("dataset_stride must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if let Some(n) = self.max_grad_norm {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Config("max_grad_norm must be positive".into()));
            }
        }
        self.loss.validate(plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub plan: PlanConfig,
    pub network: NetworkConfig,
    pub scenario: ScenarioConfig,
    pub rollout: RolloutConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            plan: PlanConfig::default(),
            network: NetworkConfig::default(),
            scenario: ScenarioConfig::default(),
            rollout: RolloutConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.scenario.validate()?;
        self.train.validate(&self.plan)?;
        self.policy_config().validate()?;
        if self.rollout.history_steps != self.plan.history_steps {
            return Err(Error::Config(format!(
                "rollout.history_steps {} differs from plan.history_steps {}",
                self.rollout.history_steps, self.plan.history_steps
            )));
        }
        if self.rollout.replan_interval == 0 || self.rollout.replan_interval > self.plan.future_steps {
            return Err(Error::Config(format!(
                "replan_interval must lie in 1..={}",
                self.plan.future_steps
            )));
        }
        if (self.plan.dt - self.scenario.world.dt).abs() > 1e-12 {
            return Err(Error::Config("plan.dt and scenario.world.dt differ".into()));
        }
        Ok(())
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            plan: self.plan.clone(),
            network: self.network.clone(),
            decoder: self
                .train
                .loss
                .detail
                .map_or(DecoderMode::Plain, |d| d.decoder),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.loss = LossConfig::timedecay(std::f64::consts::E, 1.0);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn exclusive_weight_schemes() {
        let text = r#"{"train": {"loss": {"timenorm": true, "truncation": {"t_cut": 20}}}}"#;
        let err = ExperimentConfig::from_json(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("exclusive"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"trian": {}}"#),
            Err(Error::Json(_))
        ));
    }

    #[test]
    fn timenorm_forms() {
        let a: LossConfig = serde_json::from_str(r#"{"timenorm": true}"#).unwrap();
        let b: LossConfig = serde_json::from_str(r#"{"timenorm": {"eps_guard": 1e-3}}"#).unwrap();
        assert_eq!(a.weight_mode().unwrap(), WeightMode::Timenorm(DEFAULT_EPS_GUARD));
        assert_eq!(b.weight_mode().unwrap(), WeightMode::Timenorm(1e-3));
    }

    #[test]
    fn detail_sets_decoder() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.loss = LossConfig::detail(DecoderMode::Idd, DetailTarget::Dwh);
        assert_eq!(cfg.policy_config().decoder, DecoderMode::Idd);
        assert_eq!(cfg.train.loss.label(), "idd+dwh");
    }
}
