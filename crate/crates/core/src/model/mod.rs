//! The streaming-classifier contract shared by all model families, plus
//! envelope import and merge dispatch.

mod envelope;
mod weights;

pub use envelope::{validate_payload, EnvelopeError, ModelEnvelope, PayloadHeader};
pub use weights::MergeWeights;

pub(crate) mod envelope_internal {
    pub(crate) use super::envelope::{payload_writer, section};
}
pub(crate) use weights::ordered_sum;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurizer::FeatureVector;
use crate::forest::Forest;
use crate::mlp::MlpModel;
use crate::nb::NaiveBayes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Benign = 0,
    Malicious = 1,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Benign, ClassLabel::Malicious];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ClassLabel::Benign),
            1 => Some(ClassLabel::Malicious),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Benign => "benign",
            ClassLabel::Malicious => "malicious",
        }
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "0" => Ok(ClassLabel::Benign),
            "malicious" | "1" => Ok(ClassLabel::Malicious),
            other => Err(format!("unknown class label {other:?}")),
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-class scores. Not necessarily normalized: naive Bayes reports the
/// raw posterior formula, the other families report probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub benign: f64,
    pub malicious: f64,
}

impl ClassScores {
    pub const UNIFORM: ClassScores = ClassScores { benign: 0.5, malicious: 0.5 };

    pub fn new(benign: f64, malicious: f64) -> Self {
        Self { benign, malicious }
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        match label {
            ClassLabel::Benign => self.benign,
            ClassLabel::Malicious => self.malicious,
        }
    }

    /// Argmax class; ties go to benign.
    pub fn predicted(&self) -> ClassLabel {
        if self.malicious > self.benign {
            ClassLabel::Malicious
        } else {
            ClassLabel::Benign
        }
    }

    /// malicious / (benign + malicious), 0.5 when both are zero.
    pub fn malicious_ratio(&self) -> f64 {
        let total = self.benign + self.malicious;
        if total > 0.0 && total.is_finite() {
            self.malicious / total
        } else {
            0.5
        }
    }

    /// Thresholded decision on the malicious ratio (strictly above).
    pub fn classify(&self, threshold: f64) -> ClassLabel {
        if self.malicious_ratio() > threshold {
            ClassLabel::Malicious
        } else {
            ClassLabel::Benign
        }
    }

    pub fn is_valid(&self) -> bool {
        self.benign.is_finite() && self.malicious.is_finite() && self.benign >= 0.0 && self.malicious >= 0.0
    }

    /// Bitwise equality, used for round-trip checks.
    pub fn bit_eq(&self, other: &ClassScores) -> bool {
        self.benign.to_bits() == other.benign.to_bits() && self.malicious.to_bits() == other.malicious.to_bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Nb,
    Forest,
}

impl ModelKind {
    pub fn tag(self) -> [u8; 4] {
        match self {
            ModelKind::Mlp => *b"MLP\0",
            ModelKind::Nb => *b"NBH\0",
            ModelKind::Forest => *b"RFT\0",
        }
    }

    pub fn from_tag(tag: [u8; 4]) -> Option<Self> {
        [ModelKind::Mlp, ModelKind::Nb, ModelKind::Forest].into_iter().find(|k| k.tag() == tag)
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::Mlp => 0,
            ModelKind::Nb => 1,
            ModelKind::Forest => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Mlp),
            1 => Some(ModelKind::Nb),
            2 => Some(ModelKind::Forest),
            _ => None,
        }
    }

    /// Additive models share count increments and the consensus accumulates
    /// them, so repeated rounds never double count.
    pub fn is_additive(self) -> bool {
        matches!(self, ModelKind::Nb)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Nb => "nb",
            ModelKind::Forest => "forest",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "nb" => Ok(ModelKind::Nb),
            "forest" => Ok(ModelKind::Forest),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("feature vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot merge envelopes of different model kinds")]
    MixedKinds,
    #[error("schema hash {got:016x} does not match expected {expected:016x}")]
    SchemaMismatch { expected: u64, got: u64 },
    #[error("{weights} merge weights supplied for {models} models")]
    WeightArityMismatch { weights: usize, models: usize },
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("model kind {got} does not match expected {expected}")]
    KindMismatch { expected: ModelKind, got: ModelKind },
    #[error("merge requires at least one model")]
    EmptyMerge,
    #[error("invalid merge weights: {0}")]
    InvalidWeights(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

pub(crate) fn check_dim(expected: usize, x: &FeatureVector) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::DimensionMismatch { expected, got: x.len() });
    }
    Ok(())
}

/// A pluggable streaming classifier: one record at a time, parameters
/// exchanged only through [`ModelEnvelope`]s.
pub trait Classifier: Send {
    fn kind(&self) -> ModelKind;
    fn dim(&self) -> usize;
    fn schema_hash(&self) -> u64;
    fn records_seen(&self) -> u64;

    fn predict(&self, x: &FeatureVector) -> Result<ClassScores, ModelError>;
    fn train_one(&mut self, x: &FeatureVector, y: ClassLabel) -> Result<(), ModelError>;

    fn export(&self, org_id: &str, round: u64) -> ModelEnvelope;

    /// Envelope posted to a share store. Defaults to the full export;
    /// additive models post only what they learned since the last consensus.
    fn share_export(&self, org_id: &str, round: u64) -> ModelEnvelope {
        self.export(org_id, round)
    }

    /// Replace local state with a community consensus.
    fn apply_consensus(&mut self, consensus: &ModelEnvelope) -> Result<(), ModelError>;
}

/// Any of the three shipped model families.
#[derive(Debug, Clone)]
pub enum Model {
    Nb(NaiveBayes),
    Mlp(MlpModel),
    Forest(Forest),
}

impl Model {
    pub fn from_envelope(env: &ModelEnvelope) -> Result<Model, ModelError> {
        Ok(match env.model_kind {
            ModelKind::Nb => Model::Nb(NaiveBayes::from_envelope(env)?),
            ModelKind::Mlp => Model::Mlp(MlpModel::from_envelope(env)?),
            ModelKind::Forest => Model::Forest(Forest::from_envelope(env)?),
        })
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Model::Nb(m) => m,
            Model::Mlp(m) => m,
            Model::Forest(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier {
        match self {
            Model::Nb(m) => m,
            Model::Mlp(m) => m,
            Model::Forest(m) => m,
        }
    }
}

impl Classifier for Model {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn schema_hash(&self) -> u64 {
        self.inner().schema_hash()
    }
    fn records_seen(&self) -> u64 {
        self.inner().records_seen()
    }
    fn predict(&self, x: &FeatureVector) -> Result<ClassScores, ModelError> {
        self.inner().predict(x)
    }
    fn train_one(&mut self, x: &FeatureVector, y: ClassLabel) -> Result<(), ModelError> {
        self.inner_mut().train_one(x, y)
    }
    fn export(&self, org_id: &str, round: u64) -> ModelEnvelope {
        self.inner().export(org_id, round)
    }
    fn share_export(&self, org_id: &str, round: u64) -> ModelEnvelope {
        self.inner().share_export(org_id, round)
    }
    fn apply_consensus(&mut self, consensus: &ModelEnvelope) -> Result<(), ModelError> {
        self.inner_mut().apply_consensus(consensus)
    }
}

/// Checks that a consensus envelope can replace a local model.
pub(crate) fn check_compatible(local: &dyn Classifier, env: &ModelEnvelope) -> Result<(), ModelError> {
    if env.model_kind != local.kind() {
        return Err(ModelError::KindMismatch { expected: local.kind(), got: env.model_kind });
    }
    if env.schema_hash != local.schema_hash() {
        return Err(ModelError::SchemaMismatch { expected: local.schema_hash(), got: env.schema_hash });
    }
    Ok(())
}

/// Merges envelopes of one kind with the family's combiner: weighted
/// parameter averaging (MLP), histogram summation (NB, weights unused), or
/// proportional tree sampling (forest).
pub fn merge(envelopes: &[ModelEnvelope], weights: &MergeWeights, seed: u64) -> Result<ModelEnvelope, ModelError> {
    let first = envelopes.first().ok_or(ModelError::EmptyMerge)?;
    if envelopes.iter().any(|e| e.model_kind != first.model_kind) {
        return Err(ModelError::MixedKinds);
    }
    if let Some(e) = envelopes.iter().find(|e| e.schema_hash != first.schema_hash) {
        return Err(ModelError::SchemaMismatch { expected: first.schema_hash, got: e.schema_hash });
    }
    if weights.len() != envelopes.len() {
        return Err(ModelError::WeightArityMismatch { weights: weights.len(), models: envelopes.len() });
    }
    let round = envelopes.iter().map(|e| e.round).max().unwrap_or(0);
    let records_seen = envelopes.iter().fold(0u64, |acc, e| acc.saturating_add(e.records_seen));

    let merged: Model = match first.model_kind {
        ModelKind::Nb => {
            let models = envelopes.iter().map(NaiveBayes::from_envelope).collect::<Result<Vec<_>, _>>()?;
            Model::Nb(NaiveBayes::merge(&models)?)
        }
        ModelKind::Mlp => {
            let models = envelopes.iter().map(MlpModel::from_envelope).collect::<Result<Vec<_>, _>>()?;
            Model::Mlp(MlpModel::merge(&models, weights)?)
        }
        ModelKind::Forest => {
            let models = envelopes.iter().map(Forest::from_envelope).collect::<Result<Vec<_>, _>>()?;
            Model::Forest(Forest::merge(&models, weights, seed)?)
        }
    };
    let mut env = merged.export("merged", round);
    env.records_seen = records_seen;
    Ok(env)
}
