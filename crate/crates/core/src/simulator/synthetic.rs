//! Gaussian-mixture synthetic log streams with scheduled mean drift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::featurizer::{FeatureSchema, LogRecord};
use crate::hash::fnv1a64;
use crate::model::ClassLabel;

use super::SimError;

const BASE_TS: i64 = 1_700_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pattern {
    pub mean: Vec<f64>,
    /// Diagonal of the covariance (variances).
    pub cov: Vec<f64>,
    #[serde(default = "malicious")]
    pub label: ClassLabel,
}

fn malicious() -> ClassLabel {
    ClassLabel::Malicious
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftEvent {
    /// Per-organization record index from which the shift applies.
    pub at: u64,
    /// Pattern index; absent means the benign background.
    #[serde(default)]
    pub pattern: Option<usize>,
    /// Added to the pattern mean.
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_orgs: usize,
    pub records_per_org: usize,
    pub seed: u64,
    #[serde(default = "default_label_fraction")]
    pub label_fraction: f64,
    /// Probability that a record is drawn from an attack pattern.
    #[serde(default = "default_attack_rate")]
    pub attack_rate: f64,
    #[serde(default = "default_bins")]
    pub bins: u32,
    pub background: Pattern,
    #[serde(rename = "pattern")]
    pub patterns: Vec<Pattern>,
    /// Patterns each organization draws from; absent means all patterns.
    #[serde(default)]
    pub org_patterns: Option<Vec<Vec<usize>>>,
    #[serde(default, rename = "drift")]
    pub drift_events: Vec<DriftEvent>,
    #[serde(default = "default_holdout")]
    pub holdout: usize,
}

fn default_label_fraction() -> f64 {
    0.3
}
fn default_attack_rate() -> f64 {
    0.3
}
fn default_bins() -> u32 {
    32
}
fn default_holdout() -> usize {
    2_000
}

impl SyntheticConfig {
    /// `n_patterns` attack patterns over `n_features` features in [0,1]:
    /// pattern k raises the k-th block of features to `high` while the
    /// background sits at `low` everywhere. Organization i sees patterns
    /// i, i+1, ..., i+per_org-1 (mod n_patterns).
    #[allow(clippy::too_many_arguments)]
    pub fn block_patterns(
        n_orgs: usize,
        records_per_org: usize,
        n_patterns: usize,
        n_features: usize,
        per_org: usize,
        std: f64,
        seed: u64,
    ) -> Self {
        let (low, high) = (0.2, 0.8);
        let block = (n_features / n_patterns.max(1)).max(1);
        let var = vec![std * std; n_features];
        let patterns = (0..n_patterns)
            .map(|k| Pattern {
                mean: (0..n_features).map(|f| if f / block == k { high } else { low }).collect(),
                cov: var.clone(),
                label: ClassLabel::Malicious,
            })
            .collect();
        let org_patterns = (0..n_orgs).map(|i| (0..per_org).map(|j| (i + j) % n_patterns.max(1)).collect()).collect();
        Self {
            n_orgs,
            records_per_org,
            seed,
            label_fraction: default_label_fraction(),
            attack_rate: default_attack_rate(),
            bins: default_bins(),
            background: Pattern { mean: vec![low; n_features], cov: var, label: ClassLabel::Benign },
            patterns,
            org_patterns: Some(org_patterns),
            drift_events: Vec::new(),
            holdout: default_holdout(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_features(&self) -> usize {
        self.background.mean.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let d = self.n_features();
        if self.n_orgs == 0 {
            return bad("n_orgs must be at least 1".into());
        }
        if d == 0 {
            return bad("background mean must have at least one feature".into());
        }
        if self.patterns.is_empty() {
            return bad("at least one pattern is required".into());
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            return bad(format!("label_fraction {} outside [0, 1]", self.label_fraction));
        }
        if !(0.0..=1.0).contains(&self.attack_rate) {
            return bad(format!("attack_rate {} outside [0, 1]", self.attack_rate));
        }
        if self.bins == 0 {
            return bad("bins must be at least 1".into());
        }
        for (name, p) in std::iter::once(("background".to_string(), &self.background))
            .chain(self.patterns.iter().enumerate().map(|(i, p)| (format!("pattern {i}"), p)))
        {
            if p.mean.len() != d || p.cov.len() != d {
                return bad(format!("{name}: mean and cov must have {d} entries"));
            }
            if p.cov.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return bad(format!("{name}: covariance entries must be positive"));
            }
            if p.mean.iter().any(|m| !m.is_finite()) {
                return bad(format!("{name}: mean must be finite"));
            }
        }
        if let Some(op) = &self.org_patterns {
            if op.len() != self.n_orgs {
                return bad(format!("org_patterns has {} entries for {} orgs", op.len(), self.n_orgs));
            }
            if op.iter().flatten().any(|&p| p >= self.patterns.len()) {
                return bad("org_patterns references an unknown pattern".into());
            }
        }
        for e in &self.drift_events {
            if e.shift.len() != d {
                return bad(format!("drift at {}: shift must have {d} entries", e.at));
            }
            if e.pattern.is_some_and(|p| p >= self.patterns.len()) {
                return bad(format!("drift at {}: unknown pattern", e.at));
            }
        }
        Ok(())
    }

    /// Schema of the generated streams: numeric features f0.. over [0,1].
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::numeric(self.n_features(), 0.0, 1.0, self.bins).expect("validated dimensions")
    }

    pub fn org_id(i: usize) -> String {
        format!("org{i}")
    }

    fn patterns_of(&self, org: usize) -> Vec<usize> {
        match &self.org_patterns {
            Some(op) => op[org].clone(),
            None => (0..self.patterns.len()).collect(),
        }
    }

    /// Mean of `source` (None = background) at record index `j`.
    fn mean_at(&self, source: Option<usize>, j: u64) -> Vec<f64> {
        let mut mean = match source {
            Some(p) => self.patterns[p].mean.clone(),
            None => self.background.mean.clone(),
        };
        for e in self.drift_events.iter().filter(|e| e.pattern == source && e.at <= j) {
            mean.iter_mut().zip(&e.shift).for_each(|(m, s)| *m += s);
        }
        mean
    }
}

/// A generated stream. Ground truth lives beside the records, never inside
/// unlabeled ones; pipelines receive only `records`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrgStream {
    pub org_id: String,
    pub records: Vec<LogRecord>,
    pub truth: Vec<ClassLabel>,
    /// Attack pattern each record was drawn from (None = background).
    pub source: Vec<Option<usize>>,
}

impl OrgStream {
    fn new(org_id: String) -> Self {
        Self { org_id, records: Vec::new(), truth: Vec::new(), source: Vec::new() }
    }

    fn push(&mut self, record: LogRecord, truth: ClassLabel, source: Option<usize>) {
        self.records.push(record);
        self.truth.push(truth);
        self.source.push(source);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| r.to_json_line() + "\n").collect()
    }

    /// Digest of the stream as JSON-Lines.
    pub fn digest(&self) -> u64 {
        fnv1a64(self.to_jsonl().as_bytes())
    }
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn draw(&mut self, mean: &[f64], var: &[f64]) -> Vec<f64> {
        mean.iter()
            .zip(var)
            .map(|(&m, &v)| Normal::new(m, v.sqrt()).expect("positive variance").sample(&mut self.rng))
            .collect()
    }

    /// One record at index `j` drawn from `patterns` or the background.
    fn record(&mut self, id: String, j: u64, patterns: &[usize], labeled: Option<bool>) -> (LogRecord, ClassLabel, Option<usize>) {
        let attack = !patterns.is_empty() && self.rng.random::<f64>() < self.cfg.attack_rate;
        let source = attack.then(|| patterns[self.rng.random_range(0..patterns.len())]);
        let p = source.map_or(&self.cfg.background, |k| &self.cfg.patterns[k]);
        let mean = self.cfg.mean_at(source, j);
        let values = self.draw(&mean, &p.cov);
        let truth = p.label;
        let labeled = labeled.unwrap_or_else(|| self.rng.random::<f64>() < self.cfg.label_fraction);
        let mut rec = LogRecord::new(id, BASE_TS + j as i64);
        for (i, v) in values.iter().enumerate() {
            rec.fields.insert(format!("f{i}"), v.to_string());
        }
        if labeled {
            rec = rec.with_label(truth, "synthetic");
        }
        (rec, truth, source)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-organization streams, deterministic in the config.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Vec<OrgStream>, SimError> {
    cfg.validate()?;
    Ok((0..cfg.n_orgs)
        .map(|o| {
            let mut g = Generator { cfg, rng: stream_rng(cfg.seed, o as u64) };
            let patterns = cfg.patterns_of(o);
            let mut s = OrgStream::new(SyntheticConfig::org_id(o));
            for j in 0..cfg.records_per_org {
                let (r, t, src) = g.record(format!("o{o:03}-r{j:08}"), j as u64, &patterns, None);
                s.push(r, t, src);
            }
            s
        })
        .collect())
}

/// One pooled stream of `n` records drawing from every pattern.
pub fn gen_pooled(cfg: &SyntheticConfig, n: usize) -> Result<OrgStream, SimError> {
    cfg.validate()?;
    let mut g = Generator { cfg, rng: stream_rng(cfg.seed, u64::MAX - 1) };
    let all: Vec<usize> = (0..cfg.patterns.len()).collect();
    let mut s = OrgStream::new("pooled".into());
    for j in 0..n {
        let (r, t, src) = g.record(format!("p000-r{j:08}"), j as u64, &all, None);
        s.push(r, t, src);
    }
    Ok(s)
}

/// Fully labeled evaluation stream over every pattern, with all drift
/// applied.
pub fn gen_holdout(cfg: &SyntheticConfig) -> Result<OrgStream, SimError> {
    cfg.validate()?;
    let mut g = Generator { cfg, rng: stream_rng(cfg.seed, u64::MAX) };
    let all: Vec<usize> = (0..cfg.patterns.len()).collect();
    let at = cfg.records_per_org as u64;
    let mut s = OrgStream::new("holdout".into());
    for j in 0..cfg.holdout {
        let (r, t, src) = g.record(format!("h000-r{j:08}"), at, &all, Some(true));
        s.push(r, t, src);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum Partition {
    RoundRobin,
    /// Attack pattern k goes to the orgs in `map[k]` (round-robin within
    /// that subset); background records go round-robin to all orgs.
    ByPattern { map: Vec<Vec<usize>> },
}

pub fn partition(stream: &OrgStream, n_orgs: usize, strategy: &Partition) -> Result<Vec<OrgStream>, SimError> {
    if n_orgs == 0 {
        return Err(SimError::Config("partition needs at least one org".into()));
    }
    let mut out: Vec<OrgStream> = (0..n_orgs).map(|i| OrgStream::new(SyntheticConfig::org_id(i))).collect();
    let mut background_next = 0usize;
    let mut pattern_next: Vec<usize> = Vec::new();
    for (i, rec) in stream.records.iter().enumerate() {
        let src = stream.source[i];
        let target = match (strategy, src) {
            (Partition::RoundRobin, _) => i % n_orgs,
            (Partition::ByPattern { map }, Some(k)) => {
                let orgs = map.get(k).filter(|o| !o.is_empty()).ok_or_else(|| {
                    SimError::Config(format!("pattern {k} has no organization in the partition map"))
                })?;
                if orgs.iter().any(|&o| o >= n_orgs) {
                    return Err(SimError::Config(format!("pattern {k} maps to an unknown organization")));
                }
                if pattern_next.len() <= k {
                    pattern_next.resize(k + 1, 0);
                }
                let t = orgs[pattern_next[k] % orgs.len()];
                pattern_next[k] += 1;
                t
            }
            (Partition::ByPattern { .. }, None) => {
                let t = background_next % n_orgs;
                background_next += 1;
                t
            }
        };
        out[target].push(rec.clone(), stream.truth[i], src);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SyntheticConfig {
        SyntheticConfig::block_patterns(2, 200, 2, 8, 1, 0.05, 7)
    }

    #[test]
    fn deterministic_and_valid() {
        let c = cfg();
        let a = gen_synthetic(&c).unwrap();
        let b = gen_synthetic(&c).unwrap();
        assert_eq!(a[0].to_jsonl(), b[0].to_jsonl());
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|s| s.len() == 200));
        // org 0 sees only pattern 0
        assert!(a[0].source.iter().all(|s| *s != Some(1)));
        let mut other = c.clone();
        other.seed = 8;
        assert_ne!(gen_synthetic(&other).unwrap()[0].to_jsonl(), a[0].to_jsonl());
    }

    #[test]
    fn full_labels() {
        let mut c = cfg();
        c.label_fraction = 1.0;
        let s = gen_synthetic(&c).unwrap();
        assert!(s.iter().flat_map(|s| &s.records).all(|r| r.label.is_some()));
        c.label_fraction = 0.0;
        let s = gen_synthetic(&c).unwrap();
        assert!(s.iter().flat_map(|s| &s.records).all(|r| r.label.is_none()));
    }

    #[test]
    fn drift_shifts_the_mean() {
        let mut c = SyntheticConfig::block_patterns(1, 4000, 1, 4, 1, 0.01, 1);
        c.attack_rate = 1.0;
        c.drift_events.push(DriftEvent { at: 2000, pattern: Some(0), shift: vec![0.0, 0.0, 0.0, -0.5] });
        let s = &gen_synthetic(&c).unwrap()[0];
        let mean3 = |range: std::ops::Range<usize>| {
            let n = range.len() as f64;
            range.map(|j| s.records[j].fields["f3"].parse::<f64>().unwrap()).sum::<f64>() / n
        };
        assert!((mean3(0..2000) - 0.8).abs() < 0.01);
        assert!((mean3(2000..4000) - 0.3).abs() < 0.01);
    }

    #[test]
    fn invalid_configs() {
        let mut c = cfg();
        c.patterns.clear();
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.patterns[0].cov[0] = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.label_fraction = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = cfg();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(SyntheticConfig::from_toml_str(&text).unwrap(), c);
    }
}
