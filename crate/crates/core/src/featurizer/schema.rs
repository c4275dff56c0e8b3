use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::extract::Extract;
use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::hash::fnv1a64;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BINS: u32 = 32;

const DEFAULT_SCHEMA_TEXT: &str = include_str!("../../schemas/http_default_v1.toml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema parse error: {0}")]
    Parse(String),
    #[error("unsupported schema version {0}")]
    Version(u32),
    #[error("feature {name:?}: {reason}")]
    Feature { name: String, reason: String },
    #[error("duplicate feature name {0:?}")]
    DuplicateName(String),
    #[error("schema has no features")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    pub source: String,
    #[serde(default)]
    pub extract: Extract,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chars: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl FeatureDef {
    pub fn numeric(name: impl Into<String>, source: impl Into<String>, lo: f64, hi: f64, bins: u32) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
            source: source.into(),
            extract: Extract::Value,
            chars: None,
            range: Some([lo, hi]),
            bins: Some(bins),
            categories: None,
        }
    }

    pub fn categorical(name: impl Into<String>, source: impl Into<String>, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            source: source.into(),
            extract: Extract::Value,
            chars: None,
            range: None,
            bins: None,
            categories: Some(categories.iter().map(|c| c.to_string()).collect()),
        }
    }

    pub fn with_extract(mut self, extract: Extract) -> Self {
        self.extract = extract;
        self
    }

    fn fail(&self, reason: impl Into<String>) -> SchemaError {
        SchemaError::Feature { name: self.name.clone(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.name.trim().is_empty() {
            return Err(self.fail("empty name"));
        }
        if self.source.trim().is_empty() {
            return Err(self.fail("empty source field"));
        }
        if self.extract.is_categorical() != (self.kind == FeatureKind::Categorical) && self.extract != Extract::Value {
            return Err(self.fail(format!("extract {:?} does not produce a {:?} value", self.extract, self.kind)));
        }
        if self.extract == Extract::CharCount && self.chars.as_deref().is_none_or(str::is_empty) {
            return Err(self.fail("char_count needs a nonempty `chars`"));
        }
        match self.kind {
            FeatureKind::Numeric => {
                let [lo, hi] = self.range.ok_or_else(|| self.fail("numeric feature needs `range`"))?;
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(self.fail(format!("range [{lo}, {hi}] must satisfy lo < hi")));
                }
                if self.bins.unwrap_or(DEFAULT_BINS) < 2 {
                    return Err(self.fail("bins must be at least 2"));
                }
                if self.categories.is_some() {
                    return Err(self.fail("numeric feature cannot list categories"));
                }
            }
            FeatureKind::Categorical => {
                let cats = self.categories.as_ref().ok_or_else(|| self.fail("categorical feature needs `categories`"))?;
                if cats.is_empty() {
                    return Err(self.fail("empty category list"));
                }
                let mut seen = HashSet::new();
                if let Some(dup) = cats.iter().find(|c| !seen.insert(c.as_str())) {
                    return Err(self.fail(format!("duplicate category {dup:?}")));
                }
                if self.range.is_some() {
                    return Err(self.fail("categorical feature cannot have a range"));
                }
            }
        }
        Ok(())
    }

    /// Bin geometry. Categorical features reserve code 0 for missing or
    /// unknown values, so listed categories map to 1..=len.
    pub fn binning(&self) -> Binning {
        match self.kind {
            FeatureKind::Numeric => {
                let [lo, hi] = self.range.unwrap_or([0.0, 1.0]);
                Binning::Numeric { lo, hi, bins: self.bins.unwrap_or(DEFAULT_BINS) }
            }
            FeatureKind::Categorical => {
                Binning::Categorical { count: self.categories.as_ref().map_or(0, Vec::len) as u32 + 1 }
            }
        }
    }

    fn canonical_line(&self) -> String {
        let range = self.range.map_or(String::from("-"), |[lo, hi]| format!("{:016x}:{:016x}", lo.to_bits(), hi.to_bits()));
        let cats = self.categories.as_ref().map_or(String::from("-"), |c| c.join("\u{1f}"));
        format!(
            "{}\t{:?}\t{}\t{:?}\t{}\t{}\t{}\t{}\n",
            self.name,
            self.kind,
            self.source,
            self.extract,
            self.chars.as_deref().unwrap_or("-"),
            range,
            self.bins.unwrap_or(DEFAULT_BINS),
            cats
        )
    }
}

/// Equal-width numeric bins over `[lo, hi]` with clamping, or identity
/// binning over categorical codes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Binning {
    Numeric { lo: f64, hi: f64, bins: u32 },
    Categorical { count: u32 },
}

impl Binning {
    pub fn bin_count(&self) -> usize {
        match *self {
            Binning::Numeric { bins, .. } => bins as usize,
            Binning::Categorical { count } => count as usize,
        }
    }

    pub fn bin(&self, x: f64) -> usize {
        let last = self.bin_count().saturating_sub(1);
        if !x.is_finite() {
            return if x == f64::INFINITY { last } else { 0 };
        }
        match *self {
            Binning::Numeric { lo, hi, bins } => {
                let width = (hi - lo) / bins as f64;
                let b = ((x - lo) / width).floor();
                if b <= 0.0 {
                    0
                } else {
                    (b as usize).min(last)
                }
            }
            Binning::Categorical { .. } => {
                if x <= 0.0 {
                    0
                } else {
                    (x.round() as usize).min(last)
                }
            }
        }
    }

    /// Value at the lower edge of bin `j` (the split threshold between bins
    /// `j - 1` and `j`).
    pub fn edge(&self, j: usize) -> f64 {
        match *self {
            Binning::Numeric { lo, hi, bins } => lo + (hi - lo) * j as f64 / bins as f64,
            Binning::Categorical { .. } => j as f64,
        }
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        match *self {
            Binning::Numeric { lo, hi, bins } => {
                w.u8(0);
                w.f64(lo);
                w.f64(hi);
                w.u32(bins);
            }
            Binning::Categorical { count } => {
                w.u8(1);
                w.f64(0.0);
                w.f64(count as f64);
                w.u32(count);
            }
        }
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        let lo = r.f64()?;
        let hi = r.f64()?;
        let n = r.u32()?;
        let b = match tag {
            0 if lo.is_finite() && hi.is_finite() && lo < hi && n >= 2 => Binning::Numeric { lo, hi, bins: n },
            1 if n >= 1 => Binning::Categorical { count: n },
            _ => return Err(CodecError::Invalid(format!("bad binning tag={tag} n={n}"))),
        };
        Ok(b)
    }

    pub fn encode_all(binnings: &[Binning]) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u64(binnings.len() as u64);
        for b in binnings {
            b.encode(&mut w);
        }
        w.into_bytes()
    }

    pub fn decode_all(bytes: &[u8]) -> Result<Vec<Binning>, CodecError> {
        let mut r = ByteReader::new(bytes);
        let n = r.count(21)?;
        let out = (0..n).map(|_| Binning::decode(&mut r)).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureDef>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureDef>) -> Result<Self, SchemaError> {
        let s = Self { version: SCHEMA_VERSION, features };
        s.validate()?;
        Ok(s)
    }

    /// The shipped 81-feature HTTP log schema.
    pub fn default_http() -> Self {
        Self::from_toml_str(DEFAULT_SCHEMA_TEXT).expect("bundled schema is valid")
    }

    /// `n` numeric features named `f0..` reading fields `f0..` directly.
    pub fn numeric(n: usize, lo: f64, hi: f64, bins: u32) -> Result<Self, SchemaError> {
        Self::new((0..n).map(|i| FeatureDef::numeric(format!("f{i}"), format!("f{i}"), lo, hi, bins)).collect())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SchemaError> {
        let s: Self = toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.version != SCHEMA_VERSION {
            return Err(SchemaError::Version(self.version));
        }
        if self.features.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut names = HashSet::new();
        for f in &self.features {
            f.validate()?;
            if !names.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateName(f.name.clone()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn binnings(&self) -> Vec<Binning> {
        self.features.iter().map(FeatureDef::binning).collect()
    }

    /// Canonical text the digest is computed over. Order is semantic.
    pub fn canonical_text(&self) -> String {
        let mut out = format!("fedstream-schema v{}\n", self.version);
        for f in &self.features {
            out.push_str(&f.canonical_line());
        }
        out
    }

    pub fn digest(&self) -> u64 {
        schema_digest(self)
    }
}

/// 64-bit FNV-1a over the canonical schema text.
pub fn schema_digest(schema: &FeatureSchema) -> u64 {
    fnv1a64(schema.canonical_text().as_bytes())
}
