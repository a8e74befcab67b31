//! JSON checkpoint format.
//!
//! ```json
//! {
//!   "format": "scopekit-checkpoint",
//!   "version": 1,
//!   "seed": 7,
//!   "step": 1200,
//!   "experiment": { ... full experiment config ... },
//!   "kind": { "type": "policy", "config": { ... }, "params": [ ... ] }
//! }
//! ```
//!
//! `kind` may instead be `{"type": "expert"}`, a pseudo-checkpoint that
//! replays the scripted demonstrator. Parameters are written with enough
//! digits to round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::policy::{LearnedPlanner, PolicyConfig, PolicyParams};
use crate::sim::{ExpertPlanner, Planner};

pub const FORMAT: &str = "scopekit-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CheckpointKind {
    Policy {
        config: PolicyConfig,
        params: Vec<f64>,
    },
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    /// Optimiser steps taken when the checkpoint was written.
    pub step: u64,
    pub experiment: ExperimentConfig,
    pub kind: CheckpointKind,
}

impl Checkpoint {
    pub fn policy(params: &PolicyParams, experiment: &ExperimentConfig, step: u64) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed: experiment.seed,
            step,
            experiment: experiment.clone(),
            kind: CheckpointKind::Policy {
                config: params.config.clone(),
                params: params.values.clone(),
            },
        }
    }

    pub fn expert(experiment: &ExperimentConfig) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            seed: experiment.seed,
            step: 0,
            experiment: experiment.clone(),
            kind: CheckpointKind::Expert,
        }
    }

    pub fn params(&self) -> Result<Option<PolicyParams>> {
        match &self.kind {
            CheckpointKind::Policy { config, params } => {
                PolicyParams::from_values(config, params.clone()).map(Some)
            }
            CheckpointKind::Expert => Ok(None),
        }
    }

    pub fn planner(&self) -> Result<Box<dyn Planner>> {
        Ok(match self.params()? {
            Some(params) => Box::new(LearnedPlanner { params }),
            None => Box::new(ExpertPlanner {
                horizon: self.experiment.plan.future_steps,
            }),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Config(format!("not a checkpoint: format {:?}", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        ck.experiment.validate()?;
        ck.params()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
