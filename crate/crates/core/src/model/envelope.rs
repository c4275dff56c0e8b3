//! The only artifact that crosses organization boundaries.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "FSEV" | version u8 | kind u8 | org_id (u16 len + utf-8)
//! schema_hash u64 | round u64 | records_seen u64 | payload_len u64 | payload
//! ```
//!
//! Payload layout: 4-byte kind tag, format version byte, then a sequence of
//! sections `tag u8 | len u64 | body`. Each kind admits a fixed set of
//! parameter section tags; anything else is rejected.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::{Model, ModelKind};
use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::hash::fnv1a64;

const MAGIC: &[u8; 4] = b"FSEV";
const FILE_VERSION: u8 = 1;

pub(crate) mod section {
    pub const NB_HEADER: u8 = 0x01;
    pub const NB_GEOMETRY: u8 = 0x02;
    pub const NB_BENIGN: u8 = 0x03;
    pub const NB_MALICIOUS: u8 = 0x04;

    pub const MLP_INPUT_SCALE: u8 = 0x11;
    pub const MLP_LAYERS: u8 = 0x12;
    pub const MLP_HYPER: u8 = 0x13;

    pub const FOREST_PARAMS: u8 = 0x21;
    pub const FOREST_GEOMETRY: u8 = 0x22;
    pub const FOREST_RNG: u8 = 0x23;
    pub const FOREST_TREES: u8 = 0x24;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("not an envelope (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown model kind tag {0:?}")]
    UnknownKind([u8; 4]),
    #[error("header says {header} but payload is tagged {payload}")]
    KindMismatch { header: ModelKind, payload: ModelKind },
    #[error("section 0x{0:02x} is not a parameter section of this model kind")]
    UnknownSection(u8),
    #[error("section 0x{0:02x} appears more than once")]
    DuplicateSection(u8),
    #[error("required section 0x{0:02x} missing")]
    MissingSection(u8),
    #[error("malformed envelope: {0}")]
    Codec(#[from] CodecError),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelEnvelope {
    pub org_id: String,
    pub model_kind: ModelKind,
    pub schema_hash: u64,
    pub round: u64,
    pub records_seen: u64,
    pub payload: Vec<u8>,
}

impl ModelEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u8(FILE_VERSION);
        w.u8(self.model_kind.code());
        w.str(&self.org_id);
        w.u64(self.schema_hash);
        w.u64(self.round);
        w.u64(self.records_seen);
        w.u64(self.payload.len() as u64);
        w.bytes(&self.payload);
        w.into_bytes()
    }

    /// Parses the header and checks the payload's section grammar.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let mut r = ByteReader::new(bytes);
        if r.take(4).map_err(|_| EnvelopeError::BadMagic)? != MAGIC {
            return Err(EnvelopeError::BadMagic);
        }
        let version = r.u8()?;
        if version != FILE_VERSION {
            return Err(EnvelopeError::UnsupportedVersion(version));
        }
        let code = r.u8()?;
        let model_kind =
            ModelKind::from_code(code).ok_or(EnvelopeError::UnknownKind([code, 0, 0, 0]))?;
        let org_id = r.str()?;
        let schema_hash = r.u64()?;
        let round = r.u64()?;
        let records_seen = r.u64()?;
        let len = r.count(1)?;
        let payload = r.take(len)?.to_vec();
        r.finish()?;
        let env = Self { org_id, model_kind, schema_hash, round, records_seen, payload };
        PayloadHeader::parse(&env.payload, model_kind)?;
        Ok(env)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), EnvelopeError> {
        let path = path.as_ref();
        let tmp = path.with_extension("env.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| EnvelopeError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| EnvelopeError::Io(e.to_string()))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, EnvelopeError> {
        let bytes = std::fs::read(path).map_err(|e| EnvelopeError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn digest(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }

    /// Full structural validation: section grammar plus a complete decode
    /// of every parameter block.
    pub fn validate(&self) -> Result<(), EnvelopeError> {
        validate_payload(self.model_kind, &self.payload)
    }
}

/// Parsed payload preamble and its sections.
#[derive(Debug)]
pub struct PayloadHeader<'a> {
    pub kind: ModelKind,
    pub version: u8,
    pub sections: BTreeMap<u8, &'a [u8]>,
}

impl<'a> PayloadHeader<'a> {
    pub fn parse(payload: &'a [u8], expected: ModelKind) -> Result<Self, EnvelopeError> {
        let mut r = ByteReader::new(payload);
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let kind = ModelKind::from_tag(tag).ok_or(EnvelopeError::UnknownKind(tag))?;
        if kind != expected {
            return Err(EnvelopeError::KindMismatch { header: expected, payload: kind });
        }
        let version = r.u8()?;
        let allowed = allowed_sections(kind);
        let mut sections = BTreeMap::new();
        while !r.is_empty() {
            let (tag, body) = r.section()?;
            if !allowed.contains(&tag) {
                return Err(EnvelopeError::UnknownSection(tag));
            }
            if sections.insert(tag, body).is_some() {
                return Err(EnvelopeError::DuplicateSection(tag));
            }
        }
        if let Some(missing) = allowed.iter().find(|t| !sections.contains_key(t)) {
            return Err(EnvelopeError::MissingSection(*missing));
        }
        Ok(Self { kind, version, sections })
    }

    pub fn section(&self, tag: u8) -> &'a [u8] {
        self.sections.get(&tag).copied().expect("presence checked in parse")
    }
}

fn allowed_sections(kind: ModelKind) -> &'static [u8] {
    use section::*;
    match kind {
        ModelKind::Nb => &[NB_HEADER, NB_GEOMETRY, NB_BENIGN, NB_MALICIOUS],
        ModelKind::Mlp => &[MLP_INPUT_SCALE, MLP_LAYERS, MLP_HYPER],
        ModelKind::Forest => &[FOREST_PARAMS, FOREST_GEOMETRY, FOREST_RNG, FOREST_TREES],
    }
}

pub(crate) fn payload_writer(kind: ModelKind, version: u8) -> ByteWriter {
    let mut w = ByteWriter::new();
    w.bytes(&kind.tag());
    w.u8(version);
    w
}

/// Rejects any payload that is not exactly the kind's parameter grammar.
pub fn validate_payload(kind: ModelKind, payload: &[u8]) -> Result<(), EnvelopeError> {
    PayloadHeader::parse(payload, kind)?;
    let probe = ModelEnvelope {
        org_id: String::new(),
        model_kind: kind,
        schema_hash: 0,
        round: 0,
        records_seen: 0,
        payload: payload.to_vec(),
    };
    Model::from_envelope(&probe).map(|_| ()).map_err(|e| match e {
        super::ModelError::Envelope(inner) => inner,
        other => EnvelopeError::Invalid(other.to_string()),
    })
}
