//! Label feeds: pluggable lookups that attach ground-truth labels to
//! records. The shipped implementation is a deterministic pattern stub.

use serde::{Deserialize, Serialize};

use super::LogRecord;
use crate::model::ClassLabel;

pub trait LabelFeed: Send + Sync {
    fn name(&self) -> &str;
    /// Deterministic for a given record within a run.
    fn lookup(&self, record: &LogRecord) -> Option<(ClassLabel, f64)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubRule {
    /// Glob over the field value; `*` matches any run of characters.
    pub pattern: String,
    pub label: ClassLabel,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    1.0
}

/// Labels records whose `field` matches one of its rules (first rule wins).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubFeed {
    pub name: String,
    #[serde(default = "default_field")]
    pub field: String,
    #[serde(rename = "rule", default)]
    pub rules: Vec<StubRule>,
}

fn default_field() -> String {
    "host".into()
}

impl StubFeed {
    pub fn new(name: impl Into<String>, field: impl Into<String>) -> Self {
        Self { name: name.into(), field: field.into(), rules: Vec::new() }
    }

    pub fn rule(mut self, pattern: impl Into<String>, label: ClassLabel, confidence: f64) -> Self {
        self.rules.push(StubRule { pattern: pattern.into(), label, confidence: confidence.clamp(0.0, 1.0) });
        self
    }
}

impl LabelFeed for StubFeed {
    fn name(&self) -> &str {
        &self.name
    }

    fn lookup(&self, record: &LogRecord) -> Option<(ClassLabel, f64)> {
        let value = record.field(&self.field)?;
        self.rules
            .iter()
            .find(|r| glob_match(&r.pattern.to_ascii_lowercase(), &value.to_ascii_lowercase()))
            .map(|r| (r.label, r.confidence.clamp(0.0, 1.0)))
    }
}

/// Feed configuration file: `[[feed]]` tables with `[[feed.rule]]` entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedConfig {
    #[serde(rename = "feed", default)]
    pub feeds: Vec<StubFeed>,
}

impl FeedConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn into_feeds(self) -> Vec<Box<dyn LabelFeed>> {
        self.feeds.into_iter().map(|f| Box::new(f) as Box<dyn LabelFeed>).collect()
    }
}

fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Attaches the first answering feed's label. Records that already carry a
/// label are returned unchanged.
pub fn attach_label(mut record: LogRecord, feeds: &[Box<dyn LabelFeed>]) -> LogRecord {
    if record.label.is_some() {
        return record;
    }
    if let Some((feed, (label, _))) = feeds.iter().find_map(|f| f.lookup(&record).map(|hit| (f, hit))) {
        record.label = Some(label);
        record.label_source = Some(feed.name().to_string());
    }
    record
}
