use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ClassLabel;

const ID_KEYS: [&str; 2] = ["record_id", "id"];
const TS_KEYS: [&str; 2] = ["timestamp", "ts"];
const LABEL_KEY: &str = "label";
const LABEL_SOURCE_KEY: &str = "label_source";
const INPUT_LABEL_SOURCE: &str = "input";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub record_id: String,
    pub timestamp: i64,
    pub fields: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ClassLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_source: Option<String>,
}

impl LogRecord {
    pub fn new(record_id: impl Into<String>, timestamp: i64) -> Self {
        Self { record_id: record_id.into(), timestamp, fields: BTreeMap::new(), label: None, label_source: None }
    }

    pub fn with_field(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.fields.insert(key.into(), value.into());
        self
    }

    pub fn with_label(mut self, label: ClassLabel, source: impl Into<String>) -> Self {
        self.label = Some(label);
        self.label_source = Some(source.into());
        self
    }

    /// Field lookup; `@timestamp` resolves to the record timestamp.
    pub fn field(&self, key: &str) -> Option<std::borrow::Cow<'_, str>> {
        if key == "@timestamp" {
            return Some(self.timestamp.to_string().into());
        }
        self.fields.get(key).map(|v| v.as_str().into())
    }

    /// JSON-Lines rendering accepted back by [`parse_record`].
    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::Map::new();
        obj.insert("record_id".into(), self.record_id.clone().into());
        obj.insert("timestamp".into(), self.timestamp.into());
        for (k, v) in &self.fields {
            obj.insert(k.clone(), v.clone().into());
        }
        if let Some(label) = self.label {
            obj.insert(LABEL_KEY.into(), label.as_str().into());
            if let Some(src) = &self.label_source {
                obj.insert(LABEL_SOURCE_KEY.into(), src.clone().into());
            }
        }
        serde_json::Value::Object(obj).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for RecordFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(RecordFormat::Jsonl),
            "csv" => Ok(RecordFormat::Csv),
            other => Err(format!("unknown record format {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("parse error at {position}: {reason}")]
    Malformed { position: usize, reason: String },
    #[error("missing required field {0:?}")]
    MissingField(&'static str),
}

fn malformed(position: usize, reason: impl Into<String>) -> ParseError {
    ParseError::Malformed { position, reason: reason.into() }
}

/// Parses one JSON-Lines record. CSV needs a header; use [`CsvRecordParser`].
pub fn parse_record(line: &str, format: RecordFormat) -> Result<LogRecord, ParseError> {
    match format {
        RecordFormat::Jsonl => parse_json(line, None),
        RecordFormat::Csv => Err(malformed(0, "csv records need a header; use CsvRecordParser")),
    }
}

fn parse_json(line: &str, declared: Option<&BTreeSet<String>>) -> Result<LogRecord, ParseError> {
    if line.trim().is_empty() {
        return Err(malformed(0, "empty line"));
    }
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| malformed(e.column(), e.to_string()))?;
    let serde_json::Value::Object(obj) = value else {
        return Err(malformed(0, "record is not a JSON object"));
    };
    let mut raw = BTreeMap::new();
    for (k, v) in obj {
        let s = match v {
            serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        raw.insert(k, s);
    }
    build_record(raw, declared)
}

fn build_record(mut raw: BTreeMap<String, String>, declared: Option<&BTreeSet<String>>) -> Result<LogRecord, ParseError> {
    let record_id = take_first(&mut raw, &ID_KEYS).ok_or(ParseError::MissingField("record_id"))?;
    if record_id.trim().is_empty() {
        return Err(ParseError::MissingField("record_id"));
    }
    let ts = take_first(&mut raw, &TS_KEYS).ok_or(ParseError::MissingField("timestamp"))?;
    let timestamp: i64 = ts.trim().parse().map_err(|_| malformed(0, format!("timestamp {ts:?} is not an integer")))?;
    if timestamp < 0 {
        return Err(malformed(0, "negative timestamp"));
    }
    let label = match raw.remove(LABEL_KEY) {
        Some(l) if !l.trim().is_empty() => Some(l.parse::<ClassLabel>().map_err(|e| malformed(0, e))?),
        _ => None,
    };
    let label_source = raw.remove(LABEL_SOURCE_KEY).filter(|s| !s.is_empty());
    let fields = match declared {
        Some(keep) => raw.into_iter().filter(|(k, _)| keep.contains(k)).collect(),
        None => raw,
    };
    Ok(LogRecord {
        record_id,
        timestamp,
        fields,
        label_source: label.map(|_| label_source.unwrap_or_else(|| INPUT_LABEL_SOURCE.into())),
        label,
    })
}

fn take_first(raw: &mut BTreeMap<String, String>, keys: &[&str]) -> Option<String> {
    keys.iter().find_map(|k| raw.remove(*k))
}

/// CSV parser bound to a header row. Empty cells are treated as absent.
#[derive(Debug, Clone)]
pub struct CsvRecordParser {
    header: Vec<String>,
    declared: Option<BTreeSet<String>>,
}

fn split_csv_line(line: &str) -> Result<Vec<String>, ParseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(line.as_bytes());
    let mut rec = csv::StringRecord::new();
    match reader.read_record(&mut rec) {
        Ok(true) => Ok(rec.iter().map(str::to_string).collect()),
        Ok(false) => Err(malformed(0, "empty line")),
        Err(e) => Err(malformed(e.position().map_or(0, |p| p.byte() as usize), e.to_string())),
    }
}

impl CsvRecordParser {
    pub fn from_header(line: &str) -> Result<Self, ParseError> {
        if line.trim().is_empty() {
            return Err(malformed(0, "empty header"));
        }
        let header = split_csv_line(line)?;
        let mut seen = BTreeSet::new();
        if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
            return Err(malformed(0, format!("duplicate column {dup:?}")));
        }
        Ok(Self { header, declared: None })
    }

    pub fn with_declared_fields(mut self, fields: BTreeSet<String>) -> Self {
        self.declared = Some(fields);
        self
    }

    pub fn parse(&self, line: &str) -> Result<LogRecord, ParseError> {
        if line.trim().is_empty() {
            return Err(malformed(0, "empty line"));
        }
        let cells = split_csv_line(line)?;
        if cells.len() != self.header.len() {
            return Err(malformed(0, format!("expected {} columns, found {}", self.header.len(), cells.len())));
        }
        let raw = self
            .header
            .iter()
            .zip(cells)
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.clone(), v))
            .collect();
        build_record(raw, self.declared.as_ref())
    }
}

/// Line-oriented record source over a reader. Blank lines are skipped;
/// malformed lines surface as `Err` items so the stream can count them.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    format: RecordFormat,
    csv: Option<CsvRecordParser>,
    declared: Option<BTreeSet<String>>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, format: RecordFormat) -> Self {
        Self { lines: reader.lines(), format, csv: None, declared: None }
    }

    pub fn with_declared_fields(mut self, fields: BTreeSet<String>) -> Self {
        self.declared = Some(fields);
        self
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<LogRecord, ParseError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(malformed(0, format!("i/o: {e}")))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(match self.format {
                RecordFormat::Jsonl => parse_json(&line, self.declared.as_ref()),
                RecordFormat::Csv => match &self.csv {
                    Some(p) => p.parse(&line),
                    None => match CsvRecordParser::from_header(&line) {
                        Ok(p) => {
                            let p = match &self.declared {
                                Some(d) => p.with_declared_fields(d.clone()),
                                None => p,
                            };
                            self.csv = Some(p);
                            continue;
                        }
                        Err(e) => Err(e),
                    },
                },
            });
        }
    }
}
