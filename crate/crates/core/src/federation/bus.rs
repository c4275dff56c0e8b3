//! In-process share bus used by the simulator: every message crossing an
//! organization boundary goes through here and is recorded in the log.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use super::{CommunityConfig, FederationError, ShareClient, ShareStore};
use crate::model::{ModelEnvelope, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Envelope,
    Consensus,
}

/// One logged message. `bytes` is the wire length of the envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub round: u64,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    pub bytes: usize,
    pub digest: String,
}

/// Every inter-organization message, with the raw wire bytes kept for audit.
#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    messages: Vec<(LogEntry, Vec<u8>)>,
}

impl MessageLog {
    fn record(&mut self, round: u64, from: &str, to: &str, kind: MessageKind, env: &ModelEnvelope) {
        let wire = env.to_bytes();
        let entry = LogEntry {
            round,
            from: from.to_string(),
            to: to.to_string(),
            kind,
            bytes: wire.len(),
            digest: format!("{:016x}", env.digest()),
        };
        self.messages.push((entry, wire));
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Entries in a canonical order (round, kind, sender, recipient), which
    /// does not depend on thread scheduling.
    pub fn entries(&self) -> Vec<&LogEntry> {
        let mut v: Vec<&LogEntry> = self.messages.iter().map(|(e, _)| e).collect();
        v.sort_by(|a, b| (a.round, a.kind, &a.from, &a.to).cmp(&(b.round, b.kind, &b.from, &b.to)));
        v
    }

    pub fn wire_messages(&self) -> impl Iterator<Item = (&LogEntry, &[u8])> {
        self.messages.iter().map(|(e, b)| (e, b.as_slice()))
    }

    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(|(e, _)| e.bytes).sum()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries()
            .into_iter()
            .map(|e| serde_json::to_string(e).expect("log entry serializes") + "\n")
            .collect()
    }

    /// Checks that every logged message is a well-formed envelope whose
    /// payload decodes under its declared kind, and that the logged length
    /// and digest match the bytes. Returns the number of messages checked.
    pub fn audit(&self) -> Result<usize, String> {
        for (entry, wire) in &self.messages {
            let env = ModelEnvelope::from_bytes(wire).map_err(|e| format!("round {} from {}: {e}", entry.round, entry.from))?;
            env.validate().map_err(|e| format!("round {} from {}: {e}", entry.round, entry.from))?;
            if wire.len() != entry.bytes || format!("{:016x}", env.digest()) != entry.digest {
                return Err(format!("round {} from {}: log entry does not match wire bytes", entry.round, entry.from));
            }
        }
        Ok(self.messages.len())
    }
}

struct State {
    store: ShareStore,
    active: BTreeSet<String>,
    failures: BTreeMap<u64, FederationError>,
    log: MessageLog,
}

impl State {
    /// Closes `round` once every still-active member has posted to it.
    fn try_close(&mut self, round: u64) {
        if self.store.is_closed(round) || self.failures.contains_key(&round) {
            return;
        }
        let posters: BTreeSet<String> = self.store.posters(round).into_iter().collect();
        if posters.is_empty() || !self.active.iter().all(|m| posters.contains(m)) {
            return;
        }
        if let Err(e) = self.store.close_round(round) {
            self.failures.insert(round, e);
        }
    }

    fn open_rounds(&self) -> Vec<u64> {
        self.store.rounds().into_iter().filter(|&r| !self.store.is_closed(r)).collect()
    }

    fn deliver(&mut self, round: u64, org: &str) -> Option<Result<ModelEnvelope, FederationError>> {
        if let Some(e) = self.failures.get(&round) {
            return Some(Err(e.clone()));
        }
        if !self.store.is_closed(round) {
            return None;
        }
        let res = self.store.consensus_for(round, org);
        if let Ok(env) = &res {
            let from = self.store.config().community_id.clone();
            self.log.record(round, &from, org, MessageKind::Consensus, env);
        }
        Some(res)
    }
}

/// A community's share store behind a lock, shared by member threads.
#[derive(Clone)]
pub struct Community {
    inner: Arc<(Mutex<State>, Condvar)>,
}

impl Community {
    pub fn new(config: CommunityConfig, schema_hash: u64, seed: u64) -> Result<Self, FederationError> {
        let active = config.members.iter().map(|m| m.org_id.clone()).collect();
        let store = ShareStore::new(config, schema_hash, seed)?;
        let state = State { store, active, failures: BTreeMap::new(), log: MessageLog::default() };
        Ok(Self { inner: Arc::new((Mutex::new(state), Condvar::new())) })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn config(&self) -> CommunityConfig {
        self.lock().store.config().clone()
    }

    /// Posts without waiting; closes the round if this was the last
    /// outstanding active member.
    pub fn post(&self, round: u64, env: ModelEnvelope) -> Result<(), FederationError> {
        let mut st = self.lock();
        let org = env.org_id.clone();
        if !st.store.config().is_member(&org) {
            return Err(FederationError::UnknownMember(org));
        }
        let to = st.store.config().community_id.clone();
        let logged = env.clone();
        st.store.post_envelope(round, env)?;
        st.log.record(round, &org, &to, MessageKind::Envelope, &logged);
        st.try_close(round);
        self.inner.1.notify_all();
        Ok(())
    }

    /// The consensus for `round` as delivered to `org`, or `None` while the
    /// round is still open.
    pub fn try_consensus(&self, round: u64, org: &str) -> Option<Result<ModelEnvelope, FederationError>> {
        self.lock().deliver(round, org)
    }

    /// Blocks until `round` closes.
    pub fn wait_consensus(&self, round: u64, org: &str) -> Result<ModelEnvelope, FederationError> {
        let mut st = self.lock();
        loop {
            if let Some(res) = st.deliver(round, org) {
                return res;
            }
            st = self.inner.1.wait(st).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Marks `org` as finished; rounds it will never post to may now close.
    pub fn leave(&self, org: &str) {
        let mut st = self.lock();
        if st.active.remove(org) {
            for r in st.open_rounds() {
                st.try_close(r);
            }
            self.inner.1.notify_all();
        }
    }

    pub fn consensus_history(&self) -> BTreeMap<u64, ModelEnvelope> {
        self.lock().store.history().clone()
    }

    pub fn last_consensus(&self) -> Option<ModelEnvelope> {
        self.lock().store.history().values().next_back().cloned()
    }

    pub fn message_log(&self) -> MessageLog {
        self.lock().log.clone()
    }

    pub fn member(&self, org_id: &str) -> Result<CommunityMember, FederationError> {
        let cfg = self.config();
        if !cfg.is_member(org_id) {
            return Err(FederationError::UnknownMember(org_id.to_string()));
        }
        Ok(CommunityMember { community: self.clone(), org_id: org_id.to_string(), anchor: cfg.anchor, left: false })
    }
}

/// A member's blocking handle on an in-process [`Community`].
pub struct CommunityMember {
    community: Community,
    org_id: String,
    anchor: f64,
    left: bool,
}

impl ShareClient for CommunityMember {
    fn org_id(&self) -> &str {
        &self.org_id
    }

    fn anchor(&self) -> f64 {
        self.anchor
    }

    fn community(&self) -> Option<(ModelKind, u64)> {
        let st = self.community.lock();
        Some((st.store.config().model_kind, st.store.schema_hash()))
    }

    fn exchange(&mut self, round: u64, envelope: ModelEnvelope) -> Result<ModelEnvelope, FederationError> {
        self.community.post(round, envelope)?;
        self.community.wait_consensus(round, &self.org_id)
    }

    fn finish(&mut self) {
        if !self.left {
            self.left = true;
            self.community.leave(&self.org_id);
        }
    }
}

impl Drop for CommunityMember {
    fn drop(&mut self) {
        self.finish();
    }
}
