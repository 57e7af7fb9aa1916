//! MIOE v1 container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MIOE" | version u16 = 1 | flags u16 = 0 | dim u32 | count u64
//! ptm_id  (u16 len + UTF-8) | name (u16 len + UTF-8) | split_tag u8
//! count x { clip_id (u16 len + UTF-8) | label u8 | dim x f32 }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CorpusError, EmbeddingCorpus, EmbeddingRecord, Label, SplitTag};

pub const MAGIC: &[u8; 4] = b"MIOE";
pub const VERSION: u16 = 1;

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn push_str(out: &mut Vec<u8>, field: &'static str, s: &str) -> Result<(), CorpusError> {
    let len = u16::try_from(s.len()).map_err(|_| CorpusError::StringTooLong { field, len: s.len() })?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes a corpus; output depends only on the corpus contents.
pub fn encode_corpus(corpus: &EmbeddingCorpus) -> Result<Vec<u8>, CorpusError> {
    let dim = u32::try_from(corpus.dim()).map_err(|_| CorpusError::DimTooLarge(corpus.dim()))?;
    let per_record: usize = corpus
        .records()
        .iter()
        .map(|r| 3 + r.clip_id.len() + 4 * corpus.dim())
        .sum();
    let mut out = Vec::with_capacity(32 + corpus.ptm_id().len() + corpus.name().len() + per_record);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    out.extend_from_slice(&(corpus.len() as u64).to_le_bytes());
    push_str(&mut out, "ptm_id", corpus.ptm_id())?;
    push_str(&mut out, "name", corpus.name())?;
    out.push(corpus.split() as u8);
    for record in corpus.records() {
        push_str(&mut out, "clip_id", &record.clip_id)?;
        out.push(record.label as u8);
        for v in &record.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn header(&mut self, field: &'static str, n: usize) -> Result<&'a [u8], CorpusError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(CorpusError::Truncated {
                field,
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn record_bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return None;
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Some(out)
    }

    fn header_u16(&mut self, field: &'static str) -> Result<u16, CorpusError> {
        Ok(u16::from_le_bytes(self.header(field, 2)?.try_into().unwrap()))
    }

    fn header_str(&mut self, field: &'static str) -> Result<String, CorpusError> {
        let len = self.header_u16(field)? as usize;
        let start = self.pos;
        let raw = self.header(field, len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CorpusError::InvalidUtf8 { field, offset: start })
    }
}

/// Parses an MIOE byte buffer, validating every invariant.
pub fn decode_corpus(bytes: &[u8]) -> Result<EmbeddingCorpus, CorpusError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CorpusError::BadMagic {
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    r.pos = 4;
    let offset = r.pos;
    let version = r.header_u16("version")?;
    if version != VERSION {
        return Err(CorpusError::UnsupportedVersion { version, offset });
    }
    let offset = r.pos;
    let flags = r.header_u16("flags")?;
    if flags != 0 {
        return Err(CorpusError::UnsupportedFlags { flags, offset });
    }
    let offset = r.pos;
    let dim = u32::from_le_bytes(r.header("dim", 4)?.try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(CorpusError::ZeroDim { offset });
    }
    let count = u64::from_le_bytes(r.header("count", 8)?.try_into().unwrap());
    let ptm_id = r.header_str("ptm_id")?;
    let name = r.header_str("name")?;
    let offset = r.pos;
    let tag = r.header("split_tag", 1)?[0];
    let split = SplitTag::from_u8(tag).ok_or(CorpusError::InvalidSplitTag { value: tag, offset })?;

    let truncated = |parsed: u64, offset: usize| CorpusError::CountMismatch {
        declared: count,
        parsed,
        offset,
    };
    // Cap the preallocation: a corrupt count must not trigger a huge allocation.
    let min_record = 3 + 4 * dim;
    let capacity = (count as usize).min((bytes.len() - r.pos) / min_record + 1);
    let mut records = Vec::with_capacity(capacity);
    let mut seen = HashSet::with_capacity(capacity);
    for parsed in 0..count {
        let record_start = r.pos;
        let id_len = r
            .record_bytes(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| truncated(parsed, bytes.len()))?;
        let id_start = r.pos;
        let raw_id = r.record_bytes(id_len).ok_or_else(|| truncated(parsed, bytes.len()))?;
        let clip_id = String::from_utf8(raw_id.to_vec()).map_err(|_| CorpusError::InvalidUtf8 {
            field: "clip_id",
            offset: id_start,
        })?;
        let label_offset = r.pos;
        let label_byte = r.record_bytes(1).ok_or_else(|| truncated(parsed, bytes.len()))?[0];
        let label = Label::from_u8(label_byte).ok_or_else(|| CorpusError::InvalidLabel {
            clip_id: clip_id.clone(),
            value: label_byte,
            offset: label_offset,
        })?;
        let vector_start = r.pos;
        let raw = r.record_bytes(4 * dim).ok_or_else(|| truncated(parsed, bytes.len()))?;
        let mut vector = Vec::with_capacity(dim);
        for (component, chunk) in raw.chunks_exact(4).enumerate() {
            let value = f32::from_le_bytes(chunk.try_into().unwrap());
            if !value.is_finite() {
                return Err(CorpusError::NonFinite {
                    clip_id,
                    component,
                    value,
                    offset: vector_start + 4 * component,
                });
            }
            vector.push(value);
        }
        if !seen.insert(clip_id.clone()) {
            return Err(CorpusError::DuplicateClipId {
                clip_id,
                offset: record_start,
            });
        }
        records.push(EmbeddingRecord { clip_id, label, vector });
    }
    if r.pos != bytes.len() {
        return Err(CorpusError::TrailingBytes {
            extra: bytes.len() - r.pos,
            offset: r.pos,
        });
    }
    EmbeddingCorpus::new(name, ptm_id, dim, split, records)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<EmbeddingCorpus, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_corpus(&bytes)
}

pub fn save_corpus(corpus: &EmbeddingCorpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let bytes = encode_corpus(corpus)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// `<file>.manifest.json` next to a corpus file.
pub fn manifest_path(corpus_path: impl AsRef<Path>) -> PathBuf {
    let mut os = corpus_path.as_ref().as_os_str().to_owned();
    os.push(".manifest.json");
    PathBuf::from(os)
}

pub fn write_manifest(corpus_path: impl AsRef<Path>, provenance: &serde_json::Value) -> Result<(), CorpusError> {
    let path = manifest_path(corpus_path);
    let mut text = serde_json::to_string_pretty(provenance).map_err(|source| CorpusError::Manifest {
        path: path.display().to_string(),
        source,
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

/// Reads the sidecar if present.
pub fn read_manifest(corpus_path: impl AsRef<Path>) -> Result<Option<serde_json::Value>, CorpusError> {
    let path = manifest_path(corpus_path);
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|source| CorpusError::Manifest {
                path: path.display().to_string(),
                source,
            }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path, e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize, dim: usize) -> EmbeddingCorpus {
        let records = (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Bonafide } else { Label::Spoof };
                let vector = (0..dim).map(|j| (i * dim + j) as f32 * 0.25 - 1.0).collect();
                EmbeddingRecord::new(format!("clip-{i}"), label, vector)
            })
            .collect();
        EmbeddingCorpus::new("sample", "wav2vec2", dim, SplitTag::Test, records).unwrap()
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_corpus(&sample(2, 3)).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_corpus(&bytes), Err(CorpusError::BadMagic { .. })));
        assert!(matches!(decode_corpus(b"MI"), Err(CorpusError::BadMagic { .. })));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode_corpus(&sample(1, 1)).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode_corpus(&bytes),
            Err(CorpusError::UnsupportedVersion { version: 2, offset: 4 })
        ));
    }

    #[test]
    fn nan_names_clip_and_offset() {
        let corpus = sample(3, 4);
        let mut bytes = encode_corpus(&corpus).unwrap();
        // Record 1 starts after the header and record 0.
        let header = 4 + 2 + 2 + 4 + 8 + (2 + 8) + (2 + 6) + 1;
        let rec0 = 2 + "clip-0".len() + 1 + 16;
        let nan_at = header + rec0 + 2 + "clip-1".len() + 1 + 4 * 2;
        bytes[nan_at..nan_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_corpus(&bytes) {
            Err(CorpusError::NonFinite {
                clip_id,
                component,
                offset,
                ..
            }) => {
                assert_eq!(clip_id, "clip-1");
                assert_eq!(component, 2);
                assert_eq!(offset, nan_at);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn truncated_records_report_count_mismatch() {
        let bytes = encode_corpus(&sample(3, 4)).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        match decode_corpus(cut) {
            Err(CorpusError::CountMismatch {
                declared,
                parsed,
                offset,
            }) => {
                assert_eq!((declared, parsed), (3, 2));
                assert_eq!(offset, cut.len());
            }
            other => panic!("expected CountMismatch, got {other:?}"),
        }
        assert!(matches!(
            decode_corpus(&bytes[..10]),
            Err(CorpusError::Truncated {
                field: "dim",
                offset: 8,
                ..
            })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_corpus(&sample(2, 2)).unwrap();
        let end = bytes.len();
        bytes.extend_from_slice(&[0, 0, 0]);
        assert!(matches!(
            decode_corpus(&bytes),
            Err(CorpusError::TrailingBytes { extra: 3, offset }) if offset == end
        ));
    }

    #[test]
    fn duplicate_and_multiclass_rejected() {
        let mut bytes = encode_corpus(&sample(2, 1)).unwrap();
        // Rename clip-1 to clip-0.
        let pos = bytes.windows(6).rposition(|w| w == b"clip-1").unwrap();
        bytes[pos + 5] = b'0';
        assert!(matches!(
            decode_corpus(&bytes),
            Err(CorpusError::DuplicateClipId { clip_id, .. }) if clip_id == "clip-0"
        ));

        let mut bytes = encode_corpus(&sample(1, 1)).unwrap();
        let label_at = bytes.len() - 5;
        bytes[label_at] = 2;
        assert!(matches!(
            decode_corpus(&bytes),
            Err(CorpusError::InvalidLabel { value: 2, offset, .. }) if offset == label_at
        ));
    }

    #[test]
    fn empty_corpus_is_valid() {
        let c = EmbeddingCorpus::new("e", "x-vector", 512, SplitTag::Unsplit, vec![]).unwrap();
        let bytes = encode_corpus(&c).unwrap();
        assert_eq!(&bytes[12..20], &0u64.to_le_bytes());
        assert_eq!(decode_corpus(&bytes).unwrap(), c);
    }

    #[test]
    fn file_size_matches_layout_arithmetic() {
        let records = (0..10)
            .map(|i| EmbeddingRecord::new(format!("id{i}"), Label::Spoof, vec![0.5; 1280]))
            .collect();
        let c = EmbeddingCorpus::new("asv-train", "xls-r", 1280, SplitTag::Train, records).unwrap();
        // magic+version+flags+dim+count, ptm_id, name, split tag
        let header = 4 + 2 + 2 + 4 + 8 + (2 + 5) + (2 + 9) + 1;
        // "id0".."id9": 2-byte length + 3 bytes, label byte, 1280 floats
        let per_record = 2 + 3 + 1 + 4 * 1280;
        assert_eq!(encode_corpus(&c).unwrap().len(), header + 10 * per_record);
        assert_eq!(header + 10 * per_record, 51_299);
    }

    #[test]
    fn save_twice_is_byte_identical_and_manifest_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample(5, 3);
        let p1 = dir.path().join("a.mioe");
        let p2 = dir.path().join("b.mioe");
        save_corpus(&c, &p1).unwrap();
        save_corpus(&c, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(load_corpus(&p1).unwrap(), c);

        assert_eq!(read_manifest(&p1).unwrap(), None);
        let prov = serde_json::json!({"source": "unit-test", "seed": 3});
        write_manifest(&p1, &prov).unwrap();
        assert_eq!(read_manifest(&p1).unwrap(), Some(prov));
        assert!(manifest_path(&p1).ends_with("a.mioe.manifest.json"));
    }

    fn arb_corpus() -> impl Strategy<Value = EmbeddingCorpus> {
        (1usize..6, 0usize..12, 0u8..4).prop_flat_map(|(dim, n, tag)| {
            (
                prop::collection::vec((any::<bool>(), prop::collection::vec(-1e6f32..1e6, dim)), n),
                "[a-z]{0,8}",
                "[a-z0-9+-]{1,12}",
            )
                .prop_map(move |(rows, name, ptm)| {
                    let records = rows
                        .into_iter()
                        .enumerate()
                        .map(|(i, (spoof, v))| {
                            let label = if spoof { Label::Spoof } else { Label::Bonafide };
                            EmbeddingRecord::new(format!("c{i}-é"), label, v)
                        })
                        .collect();
                    EmbeddingCorpus::new(name, ptm, dim, SplitTag::from_u8(tag).unwrap(), records).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(c in arb_corpus()) {
            let bytes = encode_corpus(&c).unwrap();
            prop_assert_eq!(decode_corpus(&bytes).unwrap(), c);
        }
    }
}
