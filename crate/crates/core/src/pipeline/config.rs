use serde::{Deserialize, Serialize};

use crate::featurizer::FeatureSchema;
use crate::forest::{Forest, TreeParams, DEFAULT_TREES};
use crate::mlp::{MlpHyper, MlpModel, DEFAULT_HIDDEN, DEFAULT_LEARNING_RATE};
use crate::model::{Model, ModelError, ModelKind};
use crate::nb::{NaiveBayes, DEFAULT_ALPHA};

use super::feedback::DEFAULT_RETENTION;

/// Model family plus its hyperparameters; fields that do not apply to the
/// chosen kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default = "default_trees")]
    pub trees: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tree: TreeParams,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_lr() -> f64 {
    DEFAULT_LEARNING_RATE
}
fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}
fn default_trees() -> usize {
    DEFAULT_TREES
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            alpha: DEFAULT_ALPHA,
            learning_rate: DEFAULT_LEARNING_RATE,
            hidden: DEFAULT_HIDDEN.to_vec(),
            init_seed: 0,
            trees: DEFAULT_TREES,
            seed: 0,
            tree: TreeParams::default(),
        }
    }

    pub fn nb() -> Self {
        Self::new(ModelKind::Nb)
    }

    pub fn mlp(init_seed: u64) -> Self {
        Self { init_seed, ..Self::new(ModelKind::Mlp) }
    }

    pub fn forest(trees: usize, seed: u64) -> Self {
        Self { trees, seed, ..Self::new(ModelKind::Forest) }
    }

    pub fn build(&self, schema: &FeatureSchema) -> Result<Model, ModelError> {
        Ok(match self.kind {
            ModelKind::Nb => {
                if !(self.alpha.is_finite() && self.alpha >= 0.0) {
                    return Err(ModelError::InvalidConfig("alpha must be finite and nonnegative".into()));
                }
                Model::Nb(NaiveBayes::new(schema).with_alpha(self.alpha))
            }
            ModelKind::Mlp => {
                let hyper =
                    MlpHyper { learning_rate: self.learning_rate, hidden: self.hidden.clone(), init_seed: self.init_seed };
                Model::Mlp(MlpModel::new(schema, &hyper)?)
            }
            ModelKind::Forest => Model::Forest(Forest::new(schema, self.trees, self.tree, self.seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub org_id: String,
    /// Malicious-score ratio above which an unlabeled record raises an alert.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_retention")]
    pub retention: usize,
    /// Record a windowed-accuracy point every this many records (0 = off).
    #[serde(default)]
    pub trace_every: u64,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_window() -> usize {
    1_000
}
fn default_retention() -> usize {
    DEFAULT_RETENTION
}

impl PipelineConfig {
    pub fn new(org_id: impl Into<String>) -> Self {
        Self {
            org_id: org_id.into(),
            threshold: default_threshold(),
            window: default_window(),
            retention: default_retention(),
            trace_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.window == 0 {
            return Err("window must be at least 1".into());
        }
        if self.retention == 0 {
            return Err("retention must be at least 1".into());
        }
        if self.org_id.is_empty() {
            return Err("org_id must not be empty".into());
        }
        Ok(())
    }
}
