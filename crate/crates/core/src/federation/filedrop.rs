//! Cross-process transport: one envelope file per (round, org) under a
//! shared directory. Every member reads the round's files and computes the
//! consensus itself, so identical inputs give identical consensus everywhere.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use super::{CommunityConfig, FederationError, ShareClient, ShareStore};
use crate::model::{ModelEnvelope, ModelKind};

pub struct FileDropClient {
    dir: PathBuf,
    org_id: String,
    store: ShareStore,
    poll: Duration,
    timeout: Duration,
}

impl FileDropClient {
    /// `root` holds one subdirectory per community.
    pub fn new(
        root: impl AsRef<Path>,
        config: CommunityConfig,
        org_id: &str,
        schema_hash: u64,
        seed: u64,
    ) -> Result<Self, FederationError> {
        if !config.is_member(org_id) {
            return Err(FederationError::UnknownMember(org_id.to_string()));
        }
        let dir = root.as_ref().join(&config.community_id);
        std::fs::create_dir_all(&dir).map_err(io)?;
        Ok(Self {
            dir,
            org_id: org_id.to_string(),
            store: ShareStore::new(config, schema_hash, seed)?,
            poll: Duration::from_millis(50),
            timeout: Duration::from_secs(600),
        })
    }

    /// How long to wait for other members before closing a round with
    /// whoever has posted.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    pub fn envelope_path(&self, round: u64, org: &str) -> PathBuf {
        self.dir.join(round.to_string()).join(format!("{org}.env"))
    }

    fn left_marker(&self, org: &str) -> PathBuf {
        self.dir.join("left").join(org)
    }

    pub fn store(&self) -> &ShareStore {
        &self.store
    }

    fn expected_present(&self, round: u64) -> (Vec<String>, bool) {
        let mut present = Vec::new();
        let mut complete = true;
        for m in &self.store.config().members {
            if self.envelope_path(round, &m.org_id).exists() {
                present.push(m.org_id.clone());
            } else if !self.left_marker(&m.org_id).exists() {
                complete = false;
            }
        }
        (present, complete)
    }
}

fn io(e: std::io::Error) -> FederationError {
    FederationError::Io(e.to_string())
}

impl ShareClient for FileDropClient {
    fn org_id(&self) -> &str {
        &self.org_id
    }

    fn anchor(&self) -> f64 {
        self.store.config().anchor
    }

    fn community(&self) -> Option<(ModelKind, u64)> {
        Some((self.store.config().model_kind, self.store.schema_hash()))
    }

    fn exchange(&mut self, round: u64, envelope: ModelEnvelope) -> Result<ModelEnvelope, FederationError> {
        if envelope.org_id != self.org_id {
            return Err(FederationError::UnknownMember(envelope.org_id));
        }
        let path = self.envelope_path(round, &self.org_id);
        std::fs::create_dir_all(path.parent().expect("round dir")).map_err(io)?;
        envelope.write_file(&path)?;

        let start = Instant::now();
        let present = loop {
            let (present, complete) = self.expected_present(round);
            if complete {
                break present;
            }
            if start.elapsed() >= self.timeout {
                log::warn!("round {round}: closing after timeout with {} of {} members", present.len(), self.store.config().members.len());
                break present;
            }
            std::thread::sleep(self.poll);
        };
        for org in present {
            let env = ModelEnvelope::read_file(self.envelope_path(round, &org))?;
            if env.org_id != org {
                return Err(FederationError::UnknownMember(env.org_id));
            }
            self.store.post_envelope(round, env)?;
        }
        self.store.close_round(round)?;
        self.store.consensus_for(round, &self.org_id)
    }

    fn finish(&mut self) {
        let marker = self.left_marker(&self.org_id);
        let res = std::fs::create_dir_all(marker.parent().expect("left dir")).and_then(|_| std::fs::write(&marker, b""));
        if let Err(e) = res {
            log::warn!("could not write leave marker {}: {e}", marker.display());
        }
    }
}
