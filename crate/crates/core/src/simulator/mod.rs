//! Deterministic multi-organization experiments: every organization runs
//! its pipeline twice over the same stream, once alone and once inside the
//! full community, and all resulting models are scored on a common
//! held-out stream.

mod synthetic;

pub use synthetic::{gen_holdout, gen_pooled, gen_synthetic, partition, DriftEvent, OrgStream, Partition, Pattern, SyntheticConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurizer::{FeatureSchema, Featurizer, LogRecord, ParseError};
use crate::federation::{Community, CommunityConfig, FederationError, MessageLog, ShareClient};
use crate::model::{Classifier, Model, ModelEnvelope, ModelError};
use crate::pipeline::{run_stream, Confusion, ModelSpec, Pipeline, PipelineConfig, PipelineError, RateSummary, RunReport};
use crate::federation::SharingSchedule;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("organization thread panicked")]
    ThreadPanic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Threaded,
    Sequential,
}

fn default_every() -> u64 {
    10_000
}
fn default_window() -> usize {
    1_000
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    pub model: ModelSpec,
    #[serde(default = "default_every")]
    pub every_n_records: u64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Seed for consensus merges.
    #[serde(default)]
    pub merge_seed: u64,
    #[serde(default)]
    pub anchor: f64,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub trace_every: u64,
}

impl ExperimentConfig {
    pub fn new(synthetic: SyntheticConfig, model: ModelSpec, every_n_records: u64) -> Self {
        Self {
            synthetic,
            model,
            every_n_records,
            window: default_window(),
            threshold: default_threshold(),
            merge_seed: 0,
            anchor: 0.0,
            mode: RunMode::Threaded,
            trace_every: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.synthetic.validate()?;
        Ok(cfg)
    }

    fn pipeline_config(&self, org: &str) -> PipelineConfig {
        PipelineConfig { threshold: self.threshold, window: self.window, trace_every: self.trace_every, ..PipelineConfig::new(org) }
    }

    /// Model for organization `index`; forests get a per-org bagging seed,
    /// MLPs share one initialization so averaging starts from a common point.
    fn org_model(&self, schema: &FeatureSchema, index: usize) -> Result<Model, ModelError> {
        let mut spec = self.model.clone();
        spec.seed = spec.seed.wrapping_add(index as u64);
        spec.build(schema)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrgResult {
    pub org_id: String,
    pub stream_digest: String,
    pub run: RunReport,
    /// Final local model on the held-out stream.
    pub holdout: RateSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub orgs: Vec<OrgResult>,
    /// Latest community consensus on the held-out stream (federated arm).
    pub consensus_holdout: Option<RateSummary>,
    pub message_count: usize,
    pub message_bytes: usize,
}

impl ArmReport {
    pub fn mean_holdout_accuracy(&self) -> f64 {
        self.orgs.iter().map(|o| o.holdout.accuracy).sum::<f64>() / self.orgs.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub n_orgs: usize,
    pub records_per_org: usize,
    pub holdout_records: usize,
    pub isolated: ArmReport,
    pub federated: ArmReport,
}

impl ExperimentReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "orgs {}  records/org {}  holdout {}\n\n",
            self.n_orgs, self.records_per_org, self.holdout_records
        );
        for arm in [&self.isolated, &self.federated] {
            out.push_str(&format!("[{}] messages {} ({} bytes)\n", arm.arm, arm.message_count, arm.message_bytes));
            out.push_str("org      records  rounds  preq_acc  preq_tpr  preq_fpr  hold_acc  hold_tpr  hold_fpr\n");
            for o in &arm.orgs {
                out.push_str(&format!(
                    "{:<8} {:>7}  {:>6}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}\n",
                    o.org_id,
                    o.run.counters.records_processed,
                    o.run.rounds.len(),
                    o.run.cumulative.accuracy,
                    o.run.cumulative.tpr,
                    o.run.cumulative.fpr,
                    o.holdout.accuracy,
                    o.holdout.tpr,
                    o.holdout.fpr
                ));
            }
            out.push_str(&format!("mean held-out accuracy {:.4}\n", arm.mean_holdout_accuracy()));
            if let Some(c) = &arm.consensus_holdout {
                out.push_str(&format!(
                    "consensus held-out     acc {:.4} tpr {:.4} fpr {:.4}\n",
                    c.accuracy, c.tpr, c.fpr
                ));
            }
            out.push('\n');
        }
        out
    }

    /// One JSON object per (arm, org, round) for plotting.
    pub fn metrics_jsonl(&self) -> String {
        let mut out = String::new();
        for arm in [&self.isolated, &self.federated] {
            for o in &arm.orgs {
                for r in &o.run.rounds {
                    let row = serde_json::json!({
                        "arm": arm.arm,
                        "org": o.org_id,
                        "round": r.round,
                        "records_processed": r.records_processed,
                        "window_accuracy": r.window.accuracy,
                        "window_tpr": r.window.tpr,
                        "window_fpr": r.window.fpr,
                        "cumulative_accuracy": r.cumulative.accuracy,
                    });
                    out.push_str(&row.to_string());
                    out.push('\n');
                }
            }
        }
        out
    }
}

/// Report plus the artifacts tests and the CLI inspect.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub federated_log: MessageLog,
    pub isolated_logs: Vec<MessageLog>,
    pub final_consensus: Option<ModelEnvelope>,
    pub federated_models: Vec<ModelEnvelope>,
    pub isolated_models: Vec<ModelEnvelope>,
}

/// Scores `model` on a labeled stream (threshold on malicious ratio).
pub fn evaluate<M: Classifier + ?Sized>(
    model: &M,
    schema: &FeatureSchema,
    stream: &OrgStream,
    threshold: f64,
) -> Result<RateSummary, ModelError> {
    let f = Featurizer::new(schema.clone());
    let mut c = Confusion::default();
    for (rec, &truth) in stream.records.iter().zip(&stream.truth) {
        let p = model.predict(&f.featurize(rec))?;
        c.add(p.classify(threshold), truth);
    }
    Ok(c.summary())
}

struct ArmRun {
    runs: Vec<RunReport>,
    models: Vec<Model>,
    logs: Vec<MessageLog>,
    consensus: Option<ModelEnvelope>,
}

fn source(records: &[LogRecord]) -> impl Iterator<Item = Result<LogRecord, ParseError>> + '_ {
    records.iter().cloned().map(Ok)
}

/// Runs each `groups` community over its members' streams.
fn run_arm(
    cfg: &ExperimentConfig,
    schema: &FeatureSchema,
    streams: &[OrgStream],
    groups: &[Vec<usize>],
) -> Result<ArmRun, SimError> {
    let n = streams.len();
    let mut communities = Vec::new();
    let mut community_of = vec![0usize; n];
    for (g, members) in groups.iter().enumerate() {
        let orgs: Vec<&str> = members.iter().map(|&i| streams[i].org_id.as_str()).collect();
        let mut cc = CommunityConfig::uniform(&format!("community{g}"), cfg.model.kind, &orgs, cfg.every_n_records);
        cc.anchor = cfg.anchor;
        communities.push(Community::new(cc, schema.digest(), cfg.merge_seed)?);
        for &i in members {
            community_of[i] = g;
        }
    }
    let mut pipelines = Vec::with_capacity(n);
    for (i, s) in streams.iter().enumerate() {
        let model = cfg.org_model(schema, i)?;
        let p = Pipeline::new(cfg.pipeline_config(&s.org_id), schema.clone(), model)?
            .with_schedule(SharingSchedule::every(cfg.every_n_records));
        pipelines.push(p);
    }

    let (runs, models) = match cfg.mode {
        RunMode::Threaded => run_threaded(pipelines, streams, &communities, &community_of)?,
        RunMode::Sequential => run_sequential(pipelines, streams, &communities, &community_of)?,
    };
    let consensus = communities.first().and_then(|c| c.last_consensus());
    let logs = communities.iter().map(|c| c.message_log()).collect();
    Ok(ArmRun { runs, models, logs, consensus })
}

type Finished = (Vec<RunReport>, Vec<Model>);

fn run_threaded(
    pipelines: Vec<Pipeline<Model>>,
    streams: &[OrgStream],
    communities: &[Community],
    community_of: &[usize],
) -> Result<Finished, SimError> {
    let results: Vec<Result<(RunReport, Model), SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = pipelines
            .into_iter()
            .enumerate()
            .map(|(i, mut p)| {
                let community = &communities[community_of[i]];
                let stream = &streams[i];
                scope.spawn(move || -> Result<(RunReport, Model), SimError> {
                    let mut member = community.member(&stream.org_id)?;
                    let report = run_stream(source(&stream.records), &mut p, Some(&mut member as &mut dyn ShareClient))?;
                    Ok((report, p.into_model()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or(Err(SimError::ThreadPanic))).collect()
    });
    let mut runs = Vec::new();
    let mut models = Vec::new();
    for r in results {
        let (run, model) = r?;
        runs.push(run);
        models.push(model);
    }
    Ok((runs, models))
}

enum Status {
    Running,
    Waiting(u64),
    Done,
}

/// Single-threaded lockstep schedule with the same round-closing rule as
/// the threaded mode.
fn run_sequential(
    mut pipelines: Vec<Pipeline<Model>>,
    streams: &[OrgStream],
    communities: &[Community],
    community_of: &[usize],
) -> Result<Finished, SimError> {
    let n = pipelines.len();
    let mut iters: Vec<_> = streams.iter().map(|s| source(&s.records)).collect();
    let mut status: Vec<Status> = (0..n).map(|_| Status::Running).collect();
    let mut reports: Vec<Option<RunReport>> = vec![None; n];
    loop {
        for i in 0..n {
            if !matches!(status[i], Status::Running) {
                continue;
            }
            let community = &communities[community_of[i]];
            loop {
                match iters[i].next() {
                    Some(item) => {
                        if let Some(round) = pipelines[i].process(item).map_err(SimError::from)? {
                            let env = pipelines[i].begin_share(round);
                            community.post(round, env)?;
                            status[i] = Status::Waiting(round);
                            break;
                        }
                    }
                    None => {
                        reports[i] = Some(pipelines[i].finish()?);
                        community.leave(&streams[i].org_id);
                        status[i] = Status::Done;
                        break;
                    }
                }
            }
        }
        if status.iter().all(|s| matches!(s, Status::Done)) {
            break;
        }
        let mut progressed = false;
        for i in 0..n {
            if let Status::Waiting(round) = status[i] {
                let community = &communities[community_of[i]];
                if let Some(res) = community.try_consensus(round, &streams[i].org_id) {
                    let consensus = res?;
                    let anchor = community.config().anchor;
                    pipelines[i].complete_share(round, &consensus, anchor)?;
                    status[i] = Status::Running;
                    progressed = true;
                }
            }
        }
        if !progressed {
            return Err(SimError::Config("sequential schedule stalled: no round could close".into()));
        }
    }
    let runs = reports.into_iter().map(|r| r.expect("every org finished")).collect();
    Ok((runs, pipelines.into_iter().map(Pipeline::into_model).collect()))
}

fn build_arm(
    name: &str,
    cfg: &ExperimentConfig,
    schema: &FeatureSchema,
    streams: &[OrgStream],
    holdout: &OrgStream,
    run: &ArmRun,
    with_consensus: bool,
) -> Result<ArmReport, SimError> {
    let mut orgs = Vec::new();
    for ((s, r), m) in streams.iter().zip(&run.runs).zip(&run.models) {
        orgs.push(OrgResult {
            org_id: s.org_id.clone(),
            stream_digest: format!("{:016x}", s.digest()),
            run: r.clone(),
            holdout: evaluate(m, schema, holdout, cfg.threshold)?,
        });
    }
    let consensus_holdout = match (&run.consensus, with_consensus) {
        (Some(env), true) => Some(evaluate(&Model::from_envelope(env)?, schema, holdout, cfg.threshold)?),
        _ => None,
    };
    Ok(ArmReport {
        arm: name.to_string(),
        orgs,
        consensus_holdout,
        message_count: run.logs.iter().map(MessageLog::len).sum(),
        message_bytes: run.logs.iter().map(MessageLog::total_bytes).sum(),
    })
}

/// Runs the isolated and federated arms over identical per-org streams.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, SimError> {
    cfg.synthetic.validate()?;
    if cfg.every_n_records == 0 {
        return Err(SimError::Config("every_n_records must be at least 1".into()));
    }
    let schema = cfg.synthetic.schema();
    let streams = gen_synthetic(&cfg.synthetic)?;
    let holdout = gen_holdout(&cfg.synthetic)?;
    run_on_streams(cfg, &schema, &streams, &holdout)
}

/// [`run_experiment`] over caller-supplied streams (e.g. from [`partition`]).
pub fn run_on_streams(
    cfg: &ExperimentConfig,
    schema: &FeatureSchema,
    streams: &[OrgStream],
    holdout: &OrgStream,
) -> Result<ExperimentOutcome, SimError> {
    let n = streams.len();
    if n == 0 {
        return Err(SimError::Config("at least one organization stream is required".into()));
    }
    let singles: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let isolated = run_arm(cfg, schema, streams, &singles)?;
    let federated = run_arm(cfg, schema, streams, &[(0..n).collect()])?;

    let report = ExperimentReport {
        n_orgs: n,
        records_per_org: cfg.synthetic.records_per_org,
        holdout_records: holdout.len(),
        isolated: build_arm("isolated", cfg, schema, streams, holdout, &isolated, false)?,
        federated: build_arm("federated", cfg, schema, streams, holdout, &federated, true)?,
    };
    let export = |models: &[Model], streams: &[OrgStream]| -> Vec<ModelEnvelope> {
        models.iter().zip(streams).map(|(m, s)| m.export(&s.org_id, 0)).collect()
    };
    Ok(ExperimentOutcome {
        federated_models: export(&federated.models, streams),
        isolated_models: export(&isolated.models, streams),
        report,
        federated_log: federated.logs.into_iter().next().unwrap_or_default(),
        isolated_logs: isolated.logs,
        final_consensus: federated.consensus,
    })
}
