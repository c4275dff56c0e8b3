//! Streaming, federated threat detection.
//!
//! Organizations train compact classifiers one log record at a time and
//! periodically exchange only model parameters ([`model::ModelEnvelope`]),
//! which share stores merge into community consensus models.

pub mod codec;
pub mod featurizer;
pub mod federation;
pub mod forest;
pub mod hash;
pub mod mlp;
pub mod model;
pub mod nb;
pub mod pipeline;
pub mod simulator;

pub use featurizer::{FeatureSchema, FeatureVector, LogRecord};
pub use model::{merge, ClassLabel, ClassScores, Classifier, MergeWeights, Model, ModelEnvelope, ModelError, ModelKind};
