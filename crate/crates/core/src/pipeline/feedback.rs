//! Operator label feedback joined against a bounded ring of recent feature
//! vectors. Raw records are never retained.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurizer::FeatureVector;
use crate::model::ClassLabel;

pub const DEFAULT_RETENTION: usize = 100_000;
pub const QUEUE_CAPACITY: usize = 1_024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub record_id: String,
    pub label: ClassLabel,
    pub operator_id: String,
    #[serde(default)]
    pub ts: i64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeedbackError {
    #[error("record {0} is not in the retention window")]
    UnknownRecord(String),
    #[error("operator {operator} already labeled record {record_id}")]
    DuplicateFeedback { record_id: String, operator: String },
    #[error("feedback queue is full")]
    QueueFull,
}

struct Inner {
    capacity: usize,
    queue_capacity: usize,
    seq: u64,
    ring: VecDeque<(u64, String)>,
    vectors: HashMap<String, (u64, FeatureVector)>,
    given: HashSet<(String, String)>,
    queue: VecDeque<(FeatureVector, ClassLabel)>,
}

/// Thread-safe feedback store shared between a pipeline and operators.
#[derive(Clone)]
pub struct FeedbackStore {
    inner: Arc<(Mutex<Inner>, Condvar)>,
}

impl Default for FeedbackStore {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION)
    }
}

impl FeedbackStore {
    pub fn new(retention: usize) -> Self {
        Self::with_queue_capacity(retention, QUEUE_CAPACITY)
    }

    pub fn with_queue_capacity(retention: usize, queue_capacity: usize) -> Self {
        let inner = Inner {
            capacity: retention.max(1),
            queue_capacity: queue_capacity.max(1),
            seq: 0,
            ring: VecDeque::new(),
            vectors: HashMap::new(),
            given: HashSet::new(),
            queue: VecDeque::new(),
        };
        Self { inner: Arc::new((Mutex::new(inner), Condvar::new())) }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Remembers the vector of a processed record, evicting the oldest once
    /// the ring is full.
    pub fn retain(&self, record_id: &str, x: &FeatureVector) {
        let mut st = self.lock();
        st.seq += 1;
        let seq = st.seq;
        st.ring.push_back((seq, record_id.to_string()));
        st.vectors.insert(record_id.to_string(), (seq, x.clone()));
        while st.ring.len() > st.capacity {
            let (old_seq, old_id) = st.ring.pop_front().expect("nonempty ring");
            if st.vectors.get(&old_id).is_some_and(|(s, _)| *s == old_seq) {
                st.vectors.remove(&old_id);
            }
        }
    }

    pub fn retained(&self) -> usize {
        self.lock().vectors.len()
    }

    pub fn contains(&self, record_id: &str) -> bool {
        self.lock().vectors.contains_key(record_id)
    }

    fn enqueue(st: &mut Inner, event: &FeedbackEvent) -> Result<(), FeedbackError> {
        let x = match st.vectors.get(&event.record_id) {
            Some((_, x)) => x.clone(),
            None => return Err(FeedbackError::UnknownRecord(event.record_id.clone())),
        };
        if !st.given.insert((event.record_id.clone(), event.operator_id.clone())) {
            return Err(FeedbackError::DuplicateFeedback {
                record_id: event.record_id.clone(),
                operator: event.operator_id.clone(),
            });
        }
        st.queue.push_back((x, event.label));
        Ok(())
    }

    /// Queues feedback for training; blocks while the queue is full.
    pub fn submit(&self, event: &FeedbackEvent) -> Result<(), FeedbackError> {
        let mut st = self.lock();
        while st.queue.len() >= st.queue_capacity {
            st = self.inner.1.wait(st).unwrap_or_else(|p| p.into_inner());
        }
        Self::enqueue(&mut st, event)
    }

    /// Non-blocking submit: [`FeedbackError::QueueFull`] instead of waiting.
    pub fn try_submit(&self, event: &FeedbackEvent) -> Result<(), FeedbackError> {
        let mut st = self.lock();
        if st.queue.len() >= st.queue_capacity {
            return Err(FeedbackError::QueueFull);
        }
        Self::enqueue(&mut st, event)
    }

    pub fn pending(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn drain(&self) -> Vec<(FeatureVector, ClassLabel)> {
        let mut st = self.lock();
        let out: Vec<_> = st.queue.drain(..).collect();
        if !out.is_empty() {
            self.inner.1.notify_all();
        }
        out
    }
}

pub fn submit_feedback(store: &FeedbackStore, event: &FeedbackEvent) -> Result<(), FeedbackError> {
    store.submit(event)
}

pub fn drain_feedback(store: &FeedbackStore) -> Vec<(FeatureVector, ClassLabel)> {
    store.drain()
}
