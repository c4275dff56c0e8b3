//! Community sharing: share stores collect member envelopes per round and
//! close them into a consensus that is re-shared to every member.

mod bus;
mod filedrop;

pub use bus::{Community, CommunityMember, LogEntry, MessageKind, MessageLog};
pub use filedrop::FileDropClient;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{merge, Classifier, EnvelopeError, MergeWeights, ModelEnvelope, ModelError, ModelKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FederationError {
    #[error("{0} is not a member of the community")]
    UnknownMember(String),
    #[error("{org} already posted an envelope for round {round}")]
    DuplicatePost { round: u64, org: String },
    #[error("envelope schema {got:016x} does not match community schema {expected:016x}")]
    SchemaMismatch { expected: u64, got: u64 },
    #[error("envelope kind {got} does not match community kind {expected}")]
    KindMismatch { expected: ModelKind, got: ModelKind },
    #[error("round {0} has no envelopes")]
    EmptyRound(u64),
    #[error("round {0} is already closed")]
    RoundClosed(u64),
    #[error("invalid community configuration: {0}")]
    InvalidConfig(String),
    #[error("timed out waiting for round {0}")]
    Timeout(u64),
    #[error("transport I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharingSchedule {
    #[serde(default = "default_every")]
    pub every_n_records: u64,
}

fn default_every() -> u64 {
    10_000
}

impl Default for SharingSchedule {
    fn default() -> Self {
        Self { every_n_records: default_every() }
    }
}

impl SharingSchedule {
    pub fn every(n: u64) -> Self {
        Self { every_n_records: n }
    }

    /// Round due after `processed` records, if any.
    pub fn due(&self, processed: u64) -> Option<u64> {
        (processed > 0 && processed.is_multiple_of(self.every_n_records)).then(|| processed / self.every_n_records)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Member {
    pub org_id: String,
    #[serde(default = "one")]
    pub trust: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommunityConfig {
    pub community_id: String,
    pub model_kind: ModelKind,
    #[serde(default)]
    pub schedule: SharingSchedule,
    #[serde(default = "yes")]
    pub include_self: bool,
    /// Fraction of the pre-consensus local model kept after applying a
    /// consensus (MLP only; 0 replaces the local model outright).
    #[serde(default)]
    pub anchor: f64,
    #[serde(rename = "member")]
    pub members: Vec<Member>,
}

impl CommunityConfig {
    pub fn new(community_id: impl Into<String>, model_kind: ModelKind, members: Vec<Member>, every_n_records: u64) -> Self {
        Self {
            community_id: community_id.into(),
            model_kind,
            schedule: SharingSchedule::every(every_n_records),
            include_self: true,
            anchor: 0.0,
            members,
        }
    }

    /// Equal-trust community over `orgs`.
    pub fn uniform<S: AsRef<str>>(community_id: &str, model_kind: ModelKind, orgs: &[S], every_n_records: u64) -> Self {
        let members = orgs.iter().map(|o| Member { org_id: o.as_ref().to_string(), trust: 1.0 }).collect();
        Self::new(community_id, model_kind, members, every_n_records)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, FederationError> {
        let cfg: Self = toml::from_str(text).map_err(|e| FederationError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FederationError> {
        let bad = |m: &str| Err(FederationError::InvalidConfig(m.to_string()));
        if self.members.is_empty() {
            return bad("community needs at least one member");
        }
        if self.members.iter().any(|m| !m.trust.is_finite() || m.trust < 0.0) {
            return bad("trust weights must be finite and nonnegative");
        }
        if self.members.iter().map(|m| m.trust).sum::<f64>() <= 0.0 {
            return bad("trust weights must not all be zero");
        }
        let mut ids: Vec<&str> = self.members.iter().map(|m| m.org_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate member org_id");
        }
        if self.schedule.every_n_records == 0 {
            return bad("every_n_records must be at least 1");
        }
        if !(0.0..1.0).contains(&self.anchor) {
            return bad("anchor must lie in [0, 1)");
        }
        if self.anchor > 0.0 && self.model_kind != ModelKind::Mlp {
            return bad("anchor blending is only defined for mlp communities");
        }
        if !self.include_self && self.model_kind.is_additive() {
            return bad("include_self = false is not supported for nb: members post deltas against the shared consensus");
        }
        Ok(())
    }

    pub fn trust(&self, org_id: &str) -> Option<f64> {
        self.members.iter().find(|m| m.org_id == org_id).map(|m| m.trust)
    }

    pub fn is_member(&self, org_id: &str) -> bool {
        self.trust(org_id).is_some()
    }

    /// Trust weights restricted to `posters` and renormalized.
    pub fn weights_for(&self, posters: &[&str]) -> Result<MergeWeights, FederationError> {
        let raw = posters
            .iter()
            .map(|o| self.trust(o).ok_or_else(|| FederationError::UnknownMember(o.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MergeWeights::new(raw)?)
    }
}

/// Per-round merge seed derived from the community seed (splitmix64).
pub fn round_seed(seed: u64, round: u64) -> u64 {
    let mut z = seed ^ round.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Envelopes posted per round plus the consensus history.
#[derive(Debug, Clone)]
pub struct ShareStore {
    config: CommunityConfig,
    schema_hash: u64,
    seed: u64,
    rounds: BTreeMap<u64, BTreeMap<String, ModelEnvelope>>,
    history: BTreeMap<u64, ModelEnvelope>,
}

impl ShareStore {
    pub fn new(config: CommunityConfig, schema_hash: u64, seed: u64) -> Result<Self, FederationError> {
        config.validate()?;
        Ok(Self { config, schema_hash, seed, rounds: BTreeMap::new(), history: BTreeMap::new() })
    }

    pub fn config(&self) -> &CommunityConfig {
        &self.config
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn post_envelope(&mut self, round: u64, env: ModelEnvelope) -> Result<(), FederationError> {
        if !self.config.is_member(&env.org_id) {
            return Err(FederationError::UnknownMember(env.org_id));
        }
        if env.model_kind != self.config.model_kind {
            return Err(FederationError::KindMismatch { expected: self.config.model_kind, got: env.model_kind });
        }
        if env.schema_hash != self.schema_hash {
            return Err(FederationError::SchemaMismatch { expected: self.schema_hash, got: env.schema_hash });
        }
        if self.history.contains_key(&round) {
            return Err(FederationError::RoundClosed(round));
        }
        env.validate()?;
        let posted = self.rounds.entry(round).or_default();
        if posted.contains_key(&env.org_id) {
            return Err(FederationError::DuplicatePost { round, org: env.org_id });
        }
        posted.insert(env.org_id.clone(), env);
        Ok(())
    }

    /// Envelopes posted for `round`, ordered by org id.
    pub fn posted(&self, round: u64) -> Vec<&ModelEnvelope> {
        self.rounds.get(&round).map(|m| m.values().collect()).unwrap_or_default()
    }

    pub fn posters(&self, round: u64) -> Vec<String> {
        self.rounds.get(&round).map(|m| m.keys().cloned().collect()).unwrap_or_default()
    }

    /// Rounds with at least one posted envelope.
    pub fn rounds(&self) -> Vec<u64> {
        self.rounds.keys().copied().collect()
    }

    pub fn is_closed(&self, round: u64) -> bool {
        self.history.contains_key(&round)
    }

    pub fn consensus(&self, round: u64) -> Option<&ModelEnvelope> {
        self.history.get(&round)
    }

    pub fn history(&self) -> &BTreeMap<u64, ModelEnvelope> {
        &self.history
    }

    /// Latest consensus strictly before `round`.
    fn previous_consensus(&self, round: u64) -> Option<&ModelEnvelope> {
        self.history.range(..round).next_back().map(|(_, e)| e)
    }

    fn merge_posted(&self, round: u64, skip: Option<&str>) -> Result<ModelEnvelope, FederationError> {
        let posted: Vec<&ModelEnvelope> =
            self.posted(round).into_iter().filter(|e| Some(e.org_id.as_str()) != skip).collect();
        if posted.is_empty() {
            return Err(FederationError::EmptyRound(round));
        }
        let seed = round_seed(self.seed, round);
        let mut env = if self.config.model_kind.is_additive() {
            // Members post histogram deltas since the last consensus they
            // applied; the previous consensus carries everything before.
            let mut parts: Vec<ModelEnvelope> = self.previous_consensus(round).into_iter().cloned().collect();
            parts.extend(posted.into_iter().cloned());
            let w = MergeWeights::uniform(parts.len())?;
            merge(&parts, &w, seed)?
        } else {
            let orgs: Vec<&str> = posted.iter().map(|e| e.org_id.as_str()).collect();
            let w = self.config.weights_for(&orgs)?;
            let parts: Vec<ModelEnvelope> = posted.into_iter().cloned().collect();
            merge(&parts, &w, seed)?
        };
        env.org_id = self.config.community_id.clone();
        env.round = round;
        Ok(env)
    }

    /// Merges the round's posted envelopes with trust weights restricted to
    /// the posters, records the consensus and returns it.
    pub fn close_round(&mut self, round: u64) -> Result<ModelEnvelope, FederationError> {
        if self.history.contains_key(&round) {
            return Err(FederationError::RoundClosed(round));
        }
        let env = self.merge_posted(round, None)?;
        self.history.insert(round, env.clone());
        Ok(env)
    }

    /// Consensus to deliver to `org` for a closed round. With
    /// `include_self = false` the member's own envelope is left out (falling
    /// back to the common consensus when it was the only poster).
    pub fn consensus_for(&self, round: u64, org: &str) -> Result<ModelEnvelope, FederationError> {
        let common = self.history.get(&round).ok_or(FederationError::EmptyRound(round))?;
        if self.config.include_self || self.posters(round).iter().all(|p| p == org) {
            return Ok(common.clone());
        }
        self.merge_posted(round, Some(org))
    }
}

/// Replaces `local` with `consensus`, optionally keeping `anchor` of the
/// local parameters (MLP only).
pub fn apply_consensus<M: Classifier + ?Sized>(
    local: &mut M,
    consensus: &ModelEnvelope,
    anchor: f64,
) -> Result<(), FederationError> {
    if anchor > 0.0 {
        let own = local.export("local", consensus.round);
        let w = MergeWeights::new(vec![1.0 - anchor, anchor])?;
        let mut blended = merge(&[consensus.clone(), own], &w, 0)?;
        blended.records_seen = consensus.records_seen;
        local.apply_consensus(&blended)?;
    } else {
        local.apply_consensus(consensus)?;
    }
    Ok(())
}

/// Transport between one member's pipeline and its community.
pub trait ShareClient: Send {
    fn org_id(&self) -> &str;

    fn anchor(&self) -> f64 {
        0.0
    }

    /// Model kind and schema digest the community expects, when known.
    fn community(&self) -> Option<(ModelKind, u64)> {
        None
    }

    /// Posts this member's envelope for `round` and blocks until the round's
    /// consensus is available.
    fn exchange(&mut self, round: u64, envelope: ModelEnvelope) -> Result<ModelEnvelope, FederationError>;

    /// Signals that this member will post no further rounds.
    fn finish(&mut self) {}
}
