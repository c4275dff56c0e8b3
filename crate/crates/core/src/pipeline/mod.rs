//! One organization's compute DAG: ingest, featurize, attach labels, then
//! test-then-train labeled records or alert on unlabeled ones, exchanging
//! the model with the community on a record-count schedule.

mod config;
mod feedback;
mod metrics;

pub use config::{ModelSpec, PipelineConfig};
pub use feedback::{
    drain_feedback, submit_feedback, FeedbackError, FeedbackEvent, FeedbackStore, DEFAULT_RETENTION, QUEUE_CAPACITY,
};
pub use metrics::{prequential_update, Confusion, PrequentialMetrics, RateSummary};

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurizer::{attach_label, FeatureSchema, FeatureVector, Featurizer, LabelFeed, LogRecord, ParseError};
use crate::federation::{apply_consensus, FederationError, ShareClient, SharingSchedule};
use crate::hash::fnv1a64;
use crate::model::{ClassLabel, ClassScores, Classifier, ModelEnvelope, ModelError, ModelKind};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Federation(#[from] FederationError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Alert {
    pub record_id: String,
    pub ts: i64,
    pub scores: ClassScores,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    pub records_processed: u64,
    /// Metrics of the local model just before it was shared.
    pub window: RateSummary,
    pub cumulative: RateSummary,
    pub consensus_records_seen: u64,
    pub consensus_digest: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TracePoint {
    pub records_processed: u64,
    pub window_accuracy: f64,
    pub window_n: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Counters {
    pub records_processed: u64,
    pub parse_errors: u64,
    pub labeled: u64,
    pub unlabeled: u64,
    pub train_events: u64,
    pub predict_events: u64,
    pub feedback_trained: u64,
    pub feedback_rejected: u64,
    pub alerts_emitted: u64,
    pub alert_write_errors: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub org_id: String,
    pub model_kind: ModelKind,
    pub counters: Counters,
    pub window: RateSummary,
    pub cumulative: RateSummary,
    pub rounds: Vec<RoundMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
    pub model_records_seen: u64,
    pub final_model_digest: String,
}

impl RunReport {
    pub fn records_processed(&self) -> u64 {
        self.counters.records_processed
    }

    /// Human-readable report with a per-round metrics table.
    pub fn to_text(&self) -> String {
        let c = &self.counters;
        let mut out = String::new();
        out.push_str(&format!("org_id            {}\n", self.org_id));
        out.push_str(&format!("model_kind        {}\n", self.model_kind));
        out.push_str(&format!("records_processed {}\n", c.records_processed));
        out.push_str(&format!("parse_errors      {}\n", c.parse_errors));
        out.push_str(&format!("labeled           {}\n", c.labeled));
        out.push_str(&format!("unlabeled         {}\n", c.unlabeled));
        out.push_str(&format!("train_events      {}\n", c.train_events));
        out.push_str(&format!("predict_events    {}\n", c.predict_events));
        out.push_str(&format!("feedback_trained  {}\n", c.feedback_trained));
        out.push_str(&format!("feedback_rejected {}\n", c.feedback_rejected));
        out.push_str(&format!("alerts_emitted    {}\n", c.alerts_emitted));
        out.push_str(&format!("model_digest      {}\n", self.final_model_digest));
        out.push_str(&format!(
            "window            n={} acc={:.4} tpr={:.4} fpr={:.4}\n",
            self.window.n, self.window.accuracy, self.window.tpr, self.window.fpr
        ));
        out.push_str(&format!(
            "cumulative        n={} acc={:.4} tpr={:.4} fpr={:.4}\n",
            self.cumulative.n, self.cumulative.accuracy, self.cumulative.tpr, self.cumulative.fpr
        ));
        out.push_str(&format!("rounds            {}\n\n", self.rounds.len()));
        if !self.rounds.is_empty() {
            out.push_str("round  records    win_n  win_acc  win_tpr  win_fpr  cum_acc  consensus\n");
            for r in &self.rounds {
                out.push_str(&format!(
                    "{:>5}  {:>7}  {:>7}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {}\n",
                    r.round,
                    r.records_processed,
                    r.window.n,
                    r.window.accuracy,
                    r.window.tpr,
                    r.window.fpr,
                    r.cumulative.accuracy,
                    r.consensus_digest
                ));
            }
        }
        out
    }
}

pub struct Pipeline<M: Classifier> {
    config: PipelineConfig,
    featurizer: Featurizer,
    feeds: Vec<Box<dyn LabelFeed>>,
    model: M,
    metrics: PrequentialMetrics,
    feedback: FeedbackStore,
    deferred: HashMap<String, Vec<FeedbackEvent>>,
    schedule: Option<SharingSchedule>,
    counters: Counters,
    rounds: Vec<RoundMetrics>,
    trace: Vec<TracePoint>,
    alerts: Option<Box<dyn Write + Send>>,
}

impl<M: Classifier> Pipeline<M> {
    pub fn new(config: PipelineConfig, schema: FeatureSchema, model: M) -> Result<Self, PipelineError> {
        config.validate().map_err(PipelineError::Config)?;
        let featurizer = Featurizer::new(schema);
        if model.schema_hash() != featurizer.digest() {
            return Err(ModelError::SchemaMismatch { expected: featurizer.digest(), got: model.schema_hash() }.into());
        }
        if model.dim() != featurizer.schema().dim() {
            return Err(ModelError::DimensionMismatch { expected: featurizer.schema().dim(), got: model.dim() }.into());
        }
        Ok(Self {
            metrics: PrequentialMetrics::new(config.window),
            feedback: FeedbackStore::new(config.retention),
            config,
            featurizer,
            feeds: Vec::new(),
            model,
            deferred: HashMap::new(),
            schedule: None,
            counters: Counters::default(),
            rounds: Vec::new(),
            trace: Vec::new(),
            alerts: None,
        })
    }

    pub fn with_feeds(mut self, feeds: Vec<Box<dyn LabelFeed>>) -> Self {
        self.feeds = feeds;
        self
    }

    pub fn with_schedule(mut self, schedule: SharingSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn with_alert_sink(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.alerts = Some(sink);
        self
    }

    /// Feedback replayed from a file: each event is submitted right after
    /// its record has been processed, so it trains before the next record.
    pub fn with_deferred_feedback(mut self, events: Vec<FeedbackEvent>) -> Self {
        for e in events {
            self.deferred.entry(e.record_id.clone()).or_default().push(e);
        }
        self
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn into_model(self) -> M {
        self.model
    }

    pub fn metrics(&self) -> &PrequentialMetrics {
        &self.metrics
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn feedback_store(&self) -> FeedbackStore {
        self.feedback.clone()
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn schema_hash(&self) -> u64 {
        self.featurizer.digest()
    }

    fn train_feedback(&mut self) -> Result<(), PipelineError> {
        for (x, y) in self.feedback.drain() {
            self.model.train_one(&x, y)?;
            self.counters.feedback_trained += 1;
            self.counters.train_events += 1;
        }
        Ok(())
    }

    fn emit_alert(&mut self, record: &LogRecord, scores: ClassScores) {
        self.counters.alerts_emitted += 1;
        self.metrics.alerts_emitted += 1;
        if let Some(sink) = self.alerts.as_mut() {
            let alert = Alert { record_id: record.record_id.clone(), ts: record.timestamp, scores, threshold: self.config.threshold };
            let line = serde_json::to_string(&alert).expect("alert serializes");
            if writeln!(sink, "{line}").is_err() {
                self.counters.alert_write_errors += 1;
            }
        }
    }

    /// Handles one source item. Returns the sharing round that is now due,
    /// if any; the caller must then exchange the model before continuing.
    pub fn process(&mut self, item: Result<LogRecord, ParseError>) -> Result<Option<u64>, PipelineError> {
        self.train_feedback()?;
        self.counters.records_processed += 1;
        self.metrics.records_processed += 1;
        match item {
            Ok(record) => self.process_record(record)?,
            Err(e) => {
                log::debug!("skipping record {}: {e}", self.counters.records_processed);
                self.counters.parse_errors += 1;
            }
        }
        let n = self.counters.records_processed;
        if self.config.trace_every > 0 && n.is_multiple_of(self.config.trace_every) {
            let w = self.metrics.windowed();
            self.trace.push(TracePoint { records_processed: n, window_accuracy: w.accuracy(), window_n: w.total() });
        }
        Ok(self.schedule.and_then(|s| s.due(n)))
    }

    fn process_record(&mut self, record: LogRecord) -> Result<(), PipelineError> {
        let record = attach_label(record, &self.feeds);
        let x = self.featurizer.featurize(&record);
        self.feedback.retain(&record.record_id, &x);
        self.step(&record, &x)?;
        if let Some(events) = self.deferred.remove(&record.record_id) {
            for e in events {
                if let Err(err) = self.feedback.submit(&e) {
                    log::warn!("feedback rejected: {err}");
                    self.counters.feedback_rejected += 1;
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, record: &LogRecord, x: &FeatureVector) -> Result<(), PipelineError> {
        let scores = self.model.predict(x)?;
        self.counters.predict_events += 1;
        match record.label {
            Some(truth) => {
                self.counters.labeled += 1;
                self.metrics.update(scores.classify(self.config.threshold), truth);
                self.model.train_one(x, truth)?;
                self.counters.train_events += 1;
            }
            None => {
                self.counters.unlabeled += 1;
                if scores.classify(self.config.threshold) == ClassLabel::Malicious {
                    self.emit_alert(record, scores);
                }
            }
        }
        Ok(())
    }

    /// Envelope to post for `round`; snapshots the round's local metrics.
    pub fn begin_share(&mut self, round: u64) -> ModelEnvelope {
        self.rounds.push(RoundMetrics {
            round,
            records_processed: self.counters.records_processed,
            window: self.metrics.windowed().summary(),
            cumulative: self.metrics.cumulative().summary(),
            consensus_records_seen: 0,
            consensus_digest: String::new(),
        });
        self.model.share_export(&self.config.org_id, round)
    }

    pub fn complete_share(&mut self, round: u64, consensus: &ModelEnvelope, anchor: f64) -> Result<(), PipelineError> {
        apply_consensus(&mut self.model, consensus, anchor)?;
        if let Some(r) = self.rounds.iter_mut().rev().find(|r| r.round == round) {
            r.consensus_records_seen = consensus.records_seen;
            r.consensus_digest = format!("{:016x}", consensus.digest());
        }
        Ok(())
    }

    pub fn share(&mut self, round: u64, client: &mut dyn ShareClient) -> Result<(), PipelineError> {
        let env = self.begin_share(round);
        let consensus = client.exchange(round, env)?;
        self.complete_share(round, &consensus, client.anchor())
    }

    /// Trains any outstanding feedback and assembles the report.
    pub fn finish(&mut self) -> Result<RunReport, PipelineError> {
        self.train_feedback()?;
        if let Some(sink) = self.alerts.as_mut() {
            if sink.flush().is_err() {
                self.counters.alert_write_errors += 1;
            }
        }
        Ok(self.report())
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            org_id: self.config.org_id.clone(),
            model_kind: self.model.kind(),
            counters: self.counters.clone(),
            window: self.metrics.windowed().summary(),
            cumulative: self.metrics.cumulative().summary(),
            rounds: self.rounds.clone(),
            trace: self.trace.clone(),
            model_records_seen: self.model.records_seen(),
            final_model_digest: format!("{:016x}", fnv1a64(&self.model.export(&self.config.org_id, 0).payload)),
        }
    }
}

/// Drives `pipeline` over `source`, exchanging with `client` whenever a
/// round falls due. Parse errors are counted, never fatal.
pub fn run_stream<M, I>(
    source: I,
    pipeline: &mut Pipeline<M>,
    mut client: Option<&mut dyn ShareClient>,
) -> Result<RunReport, PipelineError>
where
    M: Classifier,
    I: IntoIterator<Item = Result<LogRecord, ParseError>>,
{
    if let Some(c) = client.as_deref() {
        if let Some((kind, schema_hash)) = c.community() {
            if kind != pipeline.model.kind() {
                return Err(FederationError::KindMismatch { expected: kind, got: pipeline.model.kind() }.into());
            }
            if schema_hash != pipeline.schema_hash() {
                return Err(FederationError::SchemaMismatch { expected: schema_hash, got: pipeline.schema_hash() }.into());
            }
        }
    }
    let result = (|| {
        for item in source {
            if let Some(round) = pipeline.process(item)? {
                if let Some(c) = client.as_deref_mut() {
                    pipeline.share(round, c)?;
                }
            }
        }
        pipeline.finish()
    })();
    if let Some(c) = client {
        c.finish();
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nb::NaiveBayes;

    fn setup() -> (FeatureSchema, Pipeline<NaiveBayes>) {
        let schema = FeatureSchema::numeric(2, 0.0, 1.0, 4).unwrap();
        let nb = NaiveBayes::new(&schema);
        let p = Pipeline::new(PipelineConfig::new("a"), schema.clone(), nb).unwrap();
        (schema, p)
    }

    fn rec(id: &str, v: f64, label: Option<ClassLabel>) -> Result<LogRecord, ParseError> {
        let mut r = LogRecord::new(id, 0).with_field("f0", v.to_string()).with_field("f1", v.to_string());
        r.label = label;
        Ok(r)
    }

    #[test]
    fn empty_source() {
        let (_, mut p) = setup();
        let report = run_stream(Vec::new(), &mut p, None).unwrap();
        assert_eq!(report.records_processed(), 0);
        assert!(report.rounds.is_empty());
    }

    #[test]
    fn labeled_trains_unlabeled_alerts() {
        let (_, mut p) = setup();
        let src = vec![
            rec("1", 0.9, Some(ClassLabel::Malicious)),
            rec("2", 0.1, Some(ClassLabel::Benign)),
            Err(ParseError::MissingField("record_id")),
            rec("3", 0.9, None),
        ];
        let report = run_stream(src, &mut p, None).unwrap();
        let c = &report.counters;
        assert_eq!((c.records_processed, c.parse_errors, c.labeled, c.unlabeled), (4, 1, 2, 1));
        assert_eq!(c.train_events, 2);
        assert_eq!(c.alerts_emitted, 1);
        assert_eq!(report.model_records_seen, 2);
    }

    #[test]
    fn feedback_trains_before_next_record() {
        let (_, mut p) = setup();
        p.process(rec("1", 0.9, None)).unwrap();
        let store = p.feedback_store();
        store
            .submit(&FeedbackEvent { record_id: "1".into(), label: ClassLabel::Benign, operator_id: "op".into(), ts: 0 })
            .unwrap();
        assert_eq!(p.model().records_seen(), 0);
        p.process(rec("2", 0.5, None)).unwrap();
        assert_eq!(p.model().records_seen(), 1);
        assert_eq!(p.counters().feedback_trained, 1);
    }

    #[test]
    fn schema_mismatch_is_fatal() {
        let schema = FeatureSchema::numeric(2, 0.0, 1.0, 4).unwrap();
        let other = FeatureSchema::numeric(2, 0.0, 2.0, 4).unwrap();
        assert!(Pipeline::new(PipelineConfig::new("a"), schema, NaiveBayes::new(&other)).is_err());
    }
}
