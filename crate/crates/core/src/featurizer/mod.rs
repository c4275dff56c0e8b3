//! Log records to fixed-dimension feature vectors.
//!
//! `featurize` is total: dirty input is clamped, defaulted, or mapped to the
//! reserved category instead of failing, so a stream never halts on bad data.

mod extract;
mod feeds;
mod record;
mod schema;

pub use extract::Extract;
pub use feeds::{attach_label, FeedConfig, LabelFeed, StubFeed, StubRule};
pub use record::{parse_record, CsvRecordParser, LogRecord, ParseError, RecordFormat, RecordReader};
pub use schema::{
    schema_digest, Binning, FeatureDef, FeatureKind, FeatureSchema, SchemaError, DEFAULT_BINS, SCHEMA_VERSION,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_hash: u64,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, schema_hash: u64) -> Self {
        Self { values, schema_hash }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// A schema with its digest computed once, for per-record use.
#[derive(Debug, Clone)]
pub struct Featurizer {
    schema: FeatureSchema,
    digest: u64,
}

impl Featurizer {
    pub fn new(schema: FeatureSchema) -> Self {
        let digest = schema.digest();
        Self { schema, digest }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn featurize(&self, record: &LogRecord) -> FeatureVector {
        let values = self.schema.features.iter().map(|def| feature_value(def, record)).collect();
        FeatureVector { values, schema_hash: self.digest }
    }
}

/// Featurizes one record against `schema`.
pub fn featurize(record: &LogRecord, schema: &FeatureSchema) -> FeatureVector {
    Featurizer::new(schema.clone()).featurize(record)
}

fn feature_value(def: &FeatureDef, record: &LogRecord) -> f64 {
    let raw = record.field(&def.source);
    match def.kind {
        FeatureKind::Numeric => {
            let [lo, hi] = def.range.unwrap_or([0.0, 1.0]);
            match raw.and_then(|r| def.extract.numeric(&r, def.chars.as_deref())) {
                Some(v) if v.is_finite() => v.clamp(lo, hi),
                _ => lo + (hi - lo) / 2.0,
            }
        }
        FeatureKind::Categorical => {
            let cats = def.categories.as_deref().unwrap_or_default();
            raw.and_then(|r| def.extract.category(&r))
                .and_then(|c| cats.iter().position(|k| k.eq_ignore_ascii_case(&c)))
                .map_or(0.0, |i| (i + 1) as f64)
        }
    }
}
