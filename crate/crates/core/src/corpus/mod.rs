//! Embedding corpora: the engine's only input data model.
//!
//! A corpus holds one pooled embedding vector per clip for a single
//! pre-trained model and a single dataset split. Corpora are immutable once
//! built; every constructor validates the record invariants.

mod mioe;
mod split;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mioe::{
    decode_corpus, encode_corpus, load_corpus, manifest_path, read_manifest, save_corpus, write_manifest, MAGIC,
    VERSION,
};
pub use split::{split_corpus, split_indices, SplitSpec};
pub use synth::{synthesize_complementary_pair, synthesize_corpus};

/// Ground-truth class of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide = 0,
    Spoof = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(Label::Bonafide),
            1 => Some(Label::Spoof),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bonafide" | "bona-fide" | "0" => Ok(Label::Bonafide),
            "spoof" | "1" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Which partition of a dataset a corpus represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Unsplit = 0,
    Train = 1,
    Val = 2,
    Test = 3,
}

impl SplitTag {
    pub fn from_u8(value: u8) -> Option<Self> {
        match value {
            0 => Some(SplitTag::Unsplit),
            1 => Some(SplitTag::Train),
            2 => Some(SplitTag::Val),
            3 => Some(SplitTag::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Unsplit => "unsplit",
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub clip_id: String,
    pub label: Label,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(clip_id: impl Into<String>, label: Label, vector: Vec<f32>) -> Self {
        Self {
            clip_id: clip_id.into(),
            label,
            vector,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("bad magic {found:?} at byte offset 0 (expected \"MIOE\")")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {version} at byte offset {offset}")]
    UnsupportedVersion { version: u16, offset: usize },
    #[error("unsupported flags {flags:#06x} at byte offset {offset}")]
    UnsupportedFlags { flags: u16, offset: usize },
    #[error("truncated header: {field} needs {needed} bytes at byte offset {offset}, {available} available")]
    Truncated {
        field: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("declared count {declared} but only {parsed} complete records present; data ends at byte offset {offset}")]
    CountMismatch { declared: u64, parsed: u64, offset: usize },
    #[error("{extra} trailing bytes after the last declared record at byte offset {offset}")]
    TrailingBytes { extra: usize, offset: usize },
    #[error("non-finite value {value} in clip {clip_id:?} (component {component}) at byte offset {offset}")]
    NonFinite {
        clip_id: String,
        component: usize,
        value: f32,
        offset: usize,
    },
    #[error("duplicate clip_id {clip_id:?} at byte offset {offset}")]
    DuplicateClipId { clip_id: String, offset: usize },
    #[error("invalid label byte {value} for clip {clip_id:?} at byte offset {offset} (only 0=bonafide, 1=spoof)")]
    InvalidLabel { clip_id: String, value: u8, offset: usize },
    #[error("invalid split tag {value} at byte offset {offset}")]
    InvalidSplitTag { value: u8, offset: usize },
    #[error("invalid UTF-8 in {field} at byte offset {offset}")]
    InvalidUtf8 { field: &'static str, offset: usize },
    #[error("corpus dimension must be positive (byte offset {offset})")]
    ZeroDim { offset: usize },
    #[error("record {clip_id:?} has {found} components, corpus dim is {expected}")]
    RecordDim {
        clip_id: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value {value} in clip {clip_id:?} (component {component})")]
    NonFiniteRecord {
        clip_id: String,
        component: usize,
        value: f32,
    },
    #[error("duplicate clip_id {0:?}")]
    Duplicate(String),
    #[error("{field} is {len} bytes, longer than the 65535-byte limit")]
    StringTooLong { field: &'static str, len: usize },
    #[error("dimension {0} exceeds the u32 range of the file format")]
    DimTooLarge(usize),
    #[error("split fractions {fractions:?} invalid: {reason}")]
    InvalidSplit { fractions: [f64; 3], reason: String },
    #[error("split needs at least 3 records, corpus has {0}")]
    TooFewRecords(usize),
    #[error("split of {n} records with fractions {fractions:?} leaves the train set empty")]
    EmptyTrainSplit { n: usize, fractions: [f64; 3] },
    #[error("label conflict for shared clip_id {clip_id:?}: {label_a} vs {label_b}")]
    LabelConflict {
        clip_id: String,
        label_a: Label,
        label_b: Label,
    },
    #[error("corpora {a:?} and {b:?} share no clip_ids")]
    EmptyIntersection { a: String, b: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("manifest {path}: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A named, labeled set of fixed-dimension embeddings for one PTM and split.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCorpus {
    name: String,
    ptm_id: String,
    dim: usize,
    split: SplitTag,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingCorpus {
    /// Builds a corpus, checking dimension, finiteness and clip_id uniqueness.
    pub fn new(
        name: impl Into<String>,
        ptm_id: impl Into<String>,
        dim: usize,
        split: SplitTag,
        records: Vec<EmbeddingRecord>,
    ) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::ZeroDim { offset: 0 });
        }
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            if record.vector.len() != dim {
                return Err(CorpusError::RecordDim {
                    clip_id: record.clip_id.clone(),
                    expected: dim,
                    found: record.vector.len(),
                });
            }
            if let Some((component, &value)) = record.vector.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(CorpusError::NonFiniteRecord {
                    clip_id: record.clip_id.clone(),
                    component,
                    value,
                });
            }
            if !seen.insert(record.clip_id.as_str()) {
                return Err(CorpusError::Duplicate(record.clip_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            ptm_id: ptm_id.into(),
            dim,
            split,
            records,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ptm_id(&self) -> &str {
        &self.ptm_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// (bonafide, spoof) record counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let spoof = self.records.iter().filter(|r| r.label == Label::Spoof).count();
        (self.records.len() - spoof, spoof)
    }

    pub fn has_both_labels(&self) -> bool {
        let (bona, spoof) = self.label_counts();
        bona > 0 && spoof > 0
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    /// Same records under a different name/split tag.
    pub fn retagged(&self, name: impl Into<String>, split: SplitTag) -> Self {
        Self {
            name: name.into(),
            ptm_id: self.ptm_id.clone(),
            dim: self.dim,
            split,
            records: self.records.clone(),
        }
    }

    /// Records at `indices`, in that order. Indices must be in range and distinct.
    pub fn subset(&self, name: impl Into<String>, split: SplitTag, indices: &[usize]) -> Self {
        Self {
            name: name.into(),
            ptm_id: self.ptm_id.clone(),
            dim: self.dim,
            split,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// One clip present in both corpora of a fusion pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPair<'a> {
    pub clip_id: &'a str,
    pub a: &'a [f32],
    pub b: &'a [f32],
    pub label: Label,
}

/// Pairs records of `a` and `b` by clip_id, in `a`'s record order.
pub fn align_pair<'a>(a: &'a EmbeddingCorpus, b: &'a EmbeddingCorpus) -> Result<Vec<AlignedPair<'a>>, CorpusError> {
    let by_id: std::collections::HashMap<&str, &EmbeddingRecord> =
        b.records.iter().map(|r| (r.clip_id.as_str(), r)).collect();
    let mut out = Vec::new();
    for ra in &a.records {
        if let Some(rb) = by_id.get(ra.clip_id.as_str()) {
            if ra.label != rb.label {
                return Err(CorpusError::LabelConflict {
                    clip_id: ra.clip_id.clone(),
                    label_a: ra.label,
                    label_b: rb.label,
                });
            }
            out.push(AlignedPair {
                clip_id: &ra.clip_id,
                a: &ra.vector,
                b: &rb.vector,
                label: ra.label,
            });
        }
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyIntersection {
            a: a.name.clone(),
            b: b.name.clone(),
        });
    }
    Ok(out)
}
