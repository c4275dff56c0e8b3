use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use fedstream::federation::{CommunityConfig, FileDropClient, ShareClient};
use fedstream::featurizer::{FeatureSchema, FeedConfig, RecordFormat, RecordReader};
use fedstream::model::PayloadHeader;
use fedstream::pipeline::{run_stream, FeedbackEvent, ModelSpec, Pipeline, PipelineConfig};
use fedstream::simulator::{gen_holdout, gen_synthetic, run_experiment, ExperimentConfig, OrgStream, SyntheticConfig};
use fedstream::{merge, ClassLabel, Classifier, MergeWeights, Model, ModelEnvelope};
use log::{info, warn};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// Schema file, relative to the config file; defaults to the built-in HTTP schema.
    schema: Option<PathBuf>,
    /// Record format; inferred from the input extension when absent.
    format: Option<RecordFormat>,
    /// Label feed rules file, relative to the config file.
    feeds: Option<PathBuf>,
    pipeline: PipelineConfig,
    model: ModelSpec,
    federation: Option<FederationSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FederationSection {
    /// Shared directory holding one subdirectory per community.
    root: PathBuf,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_timeout")]
    timeout_secs: u64,
    community: CommunityConfig,
}

fn default_timeout() -> u64 {
    600
}

fn read_config(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn relative_to(config: &Path, p: &Path) -> PathBuf {
    match config.parent() {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_envelope(path: &Path, env: &ModelEnvelope) -> Result<(), CliError> {
    env.write_file(path).map_err(|e| CliError::io(path, e))
}

fn read_envelope(path: &Path) -> Result<ModelEnvelope, CliError> {
    ModelEnvelope::read_file(path).map_err(|e| CliError::io(path, e))
}

fn load_feedback(path: &Path) -> Result<Vec<FeedbackEvent>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn cmd_run(
    config_path: &Path,
    input: &Path,
    out: &Path,
    feedback: Option<&Path>,
    start_model: Option<&Path>,
) -> Result<(), CliError> {
    let cfg: RunConfig = toml::from_str(&read_config(config_path)?).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.pipeline.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let schema = match &cfg.schema {
        Some(p) => {
            let p = relative_to(config_path, p);
            FeatureSchema::from_toml_str(&read_config(&p)?).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => FeatureSchema::default_http(),
    };
    let feeds = match &cfg.feeds {
        Some(p) => {
            let p = relative_to(config_path, p);
            FeedConfig::from_toml_str(&read_config(&p)?).map_err(CliError::Config)?.into_feeds()
        }
        None => Vec::new(),
    };
    let format = cfg.format.unwrap_or_else(|| match input.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => RecordFormat::Csv,
        _ => RecordFormat::Jsonl,
    });

    let model = match start_model {
        Some(p) => {
            let env = read_envelope(p)?;
            if env.model_kind != cfg.model.kind {
                return Err(CliError::Mismatch(format!(
                    "envelope holds a {} model, config asks for {}",
                    env.model_kind, cfg.model.kind
                )));
            }
            if env.schema_hash != schema.digest() {
                return Err(CliError::Mismatch(format!(
                    "envelope schema {:016x} differs from configured schema {:016x}",
                    env.schema_hash,
                    schema.digest()
                )));
            }
            Model::from_envelope(&env)?
        }
        None => cfg.model.build(&schema)?,
    };
    let events = match feedback {
        Some(p) => load_feedback(p)?,
        None => Vec::new(),
    };

    let source = File::open(input).map_err(|e| CliError::io(input, e))?;
    create_dir(out)?;
    let alerts_path = out.join("alerts.jsonl");
    let alerts = File::create(&alerts_path).map_err(|e| CliError::io(&alerts_path, e))?;

    let org_id = cfg.pipeline.org_id.clone();
    let mut pipeline = Pipeline::new(cfg.pipeline, schema.clone(), model)?
        .with_feeds(feeds)
        .with_alert_sink(Box::new(BufWriter::new(alerts)))
        .with_deferred_feedback(events);
    let mut client = match cfg.federation {
        Some(fed) => {
            fed.community.validate()?;
            pipeline = pipeline.with_schedule(fed.community.schedule);
            let c = FileDropClient::new(&fed.root, fed.community, &org_id, schema.digest(), fed.seed)?
                .with_timeout(Duration::from_secs(fed.timeout_secs));
            Some(c)
        }
        None => None,
    };
    let records = RecordReader::new(BufReader::new(source), format);
    let report = run_stream(records, &mut pipeline, client.as_mut().map(|c| c as &mut dyn ShareClient))?;

    if report.counters.parse_errors > 0 {
        warn!("{} malformed records skipped", report.counters.parse_errors);
    }
    write_file(&out.join("report.txt"), report.to_text())?;
    write_envelope(&out.join("model.env"), &pipeline.model().export(&org_id, report.rounds.len() as u64))?;
    info!("processed {} records, {} alerts", report.records_processed(), report.counters.alerts_emitted);
    Ok(())
}

pub fn cmd_simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::from_toml_str(&read_config(config_path)?)?;
    if let Some(s) = seed {
        cfg.synthetic.seed = s;
    }
    let outcome = run_experiment(&cfg)?;
    create_dir(out)?;
    write_file(&out.join("report.txt"), outcome.report.to_text())?;
    write_file(&out.join("metrics.jsonl"), outcome.report.metrics_jsonl())?;
    write_file(&out.join("messages.jsonl"), outcome.federated_log.to_jsonl())?;
    if let Some(c) = &outcome.final_consensus {
        write_envelope(&out.join("consensus.env"), c)?;
    }
    print!("{}", outcome.report.to_text());
    Ok(())
}

pub fn cmd_merge(
    inputs: &[PathBuf],
    weights: Option<&[f64]>,
    out: &Path,
    seed: u64,
    org: &str,
) -> Result<(), CliError> {
    let envs = inputs.iter().map(|p| read_envelope(p)).collect::<Result<Vec<_>, _>>()?;
    let raw = match weights {
        Some(w) if w.len() != envs.len() => {
            return Err(CliError::Config(format!("{} weights given for {} envelopes", w.len(), envs.len())))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; envs.len()],
    };
    if weights.is_some() && !MergeWeights::is_normalized(&raw) {
        warn!("weights {raw:?} do not sum to 1; normalizing");
    }
    let a = MergeWeights::new(raw)?;
    let mut merged = merge(&envs, &a, seed)?;
    merged.org_id = org.to_string();
    write_envelope(out, &merged)?;
    info!("merged {} {} envelopes into {}", envs.len(), merged.model_kind, out.display());
    Ok(())
}

pub fn describe(env: &ModelEnvelope) -> Result<String, CliError> {
    let mut s = String::new();
    let _ = writeln!(s, "org_id        {}", env.org_id);
    let _ = writeln!(s, "model_kind    {}", env.model_kind);
    let _ = writeln!(s, "schema_hash   {:016x}", env.schema_hash);
    let _ = writeln!(s, "round         {}", env.round);
    let _ = writeln!(s, "records_seen  {}", env.records_seen);
    let _ = writeln!(s, "payload       {} bytes", env.payload.len());
    let header = PayloadHeader::parse(&env.payload, env.model_kind).map_err(fedstream::ModelError::from)?;
    let _ = writeln!(s, "format        v{}", header.version);
    for (tag, body) in &header.sections {
        let _ = writeln!(s, "section 0x{tag:02x}  {} bytes", body.len());
    }
    match Model::from_envelope(env)? {
        Model::Nb(nb) => {
            let h = nb.histograms();
            let bins = h.bin_counts();
            let _ = writeln!(s, "features      {}", h.dim());
            let _ = writeln!(s, "bins          {} total ({}..{} per feature)", bins.iter().sum::<usize>(),
                bins.iter().min().unwrap_or(&0), bins.iter().max().unwrap_or(&0));
            let _ = writeln!(s, "alpha         {}", nb.alpha());
            for k in ClassLabel::ALL {
                let _ = writeln!(s, "count {:<9} {}", k.as_str(), h.total(k));
            }
        }
        Model::Mlp(m) => {
            let p = m.params();
            for (i, (out_dim, in_dim)) in p.shapes().into_iter().enumerate() {
                let _ = writeln!(s, "layer {i}       {in_dim} -> {out_dim}");
            }
            let _ = writeln!(s, "parameters    {}", p.param_count());
            let _ = writeln!(s, "learning_rate {}", m.learning_rate());
        }
        Model::Forest(f) => {
            let _ = writeln!(s, "trees         {}", f.m());
            let _ = writeln!(s, "max_depth     {}", f.params().max_depth);
            for (i, t) in f.trees().iter().enumerate() {
                let origin = t.origin.as_ref().map_or("-".to_string(), |o| format!("{}@{}", o.org_id, o.round));
                let _ = writeln!(s, "tree {i:<3}      {} nodes, {} leaves, origin {origin}", t.node_count(), t.leaf_count());
            }
        }
    }
    Ok(s)
}

pub fn cmd_inspect(path: &Path) -> Result<(), CliError> {
    let env = read_envelope(path)?;
    print!("{}", describe(&env)?);
    Ok(())
}

fn parse_label(s: &str) -> Result<ClassLabel, CliError> {
    ClassLabel::ALL
        .into_iter()
        .find(|k| k.as_str().eq_ignore_ascii_case(s))
        .ok_or_else(|| CliError::Config(format!("label must be benign or malicious, got {s:?}")))
}

pub fn cmd_feedback(
    org: &str,
    record: &str,
    label: &str,
    operator: &str,
    ts: i64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let event = FeedbackEvent {
        record_id: record.to_string(),
        label: parse_label(label)?,
        operator_id: operator.to_string(),
        ts,
    };
    let path = out.map_or_else(|| PathBuf::from(format!("{org}.feedback.jsonl")), Path::to_path_buf);
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| CliError::io(&path, e))?;
    let line = serde_json::to_string(&event).expect("feedback event serializes");
    writeln!(f, "{line}").map_err(|e| CliError::io(&path, e))?;
    info!("queued feedback for {record} in {}", path.display());
    Ok(())
}

fn truth_jsonl(stream: &OrgStream) -> String {
    stream
        .records
        .iter()
        .zip(&stream.truth)
        .zip(&stream.source)
        .map(|((r, t), p)| serde_json::json!({ "record_id": r.record_id, "label": t, "pattern": p }).to_string() + "\n")
        .collect()
}

pub fn cmd_gen_data(config_path: &Path, out: &Path, seed: Option<u64>, with_truth: bool) -> Result<(), CliError> {
    let mut cfg = SyntheticConfig::from_toml_str(&read_config(config_path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let streams = gen_synthetic(&cfg)?;
    create_dir(out)?;
    for s in &streams {
        write_file(&out.join(format!("{}.jsonl", s.org_id)), s.to_jsonl())?;
        if with_truth {
            create_dir(&out.join("truth"))?;
            write_file(&out.join("truth").join(format!("{}.jsonl", s.org_id)), truth_jsonl(s))?;
        }
    }
    if with_truth {
        write_file(&out.join("truth").join("holdout.jsonl"), gen_holdout(&cfg)?.to_jsonl())?;
        write_file(&out.join("truth").join("schema.toml"), cfg.schema().to_toml_string())?;
    }
    info!("wrote {} streams to {}", streams.len(), out.display());
    Ok(())
}
