//! Equal Error Rate and ROC points over per-clip spoofness scores.
//!
//! Convention: higher score = more spoof-like. At threshold `t` a clip is
//! flagged spoof when `score >= t`, so
//!
//! * `FPR(t)` = fraction of bonafide clips with `score >= t`,
//! * `FNR(t)` = fraction of spoof clips with `score < t`.
//!
//! Candidate thresholds are the unique scores plus `+inf`. The EER threshold
//! minimizes `|FPR - FNR|` (ties: smaller FPR, then smaller threshold) and the
//! EER is the midpoint `(FPR + FNR) / 2` there. No ROC interpolation is done.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("EER needs both labels; got {bonafide} bonafide and {spoof} spoof scores")]
    SingleLabel { bonafide: usize, spoof: usize },
    #[error("non-finite score {score} for clip {clip_id:?}")]
    NonFinite { clip_id: String, score: f64 },
    #[error("score CSV line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("score CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub clip_id: String,
    pub label: Label,
    pub score: f64,
}

/// Per-clip scores with ground truth, in input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self, MetricsError> {
        if let Some(e) = entries.iter().find(|e| !e.score.is_finite()) {
            return Err(MetricsError::NonFinite {
                clip_id: e.clip_id.clone(),
                score: e.score,
            });
        }
        Ok(Self { entries })
    }

    /// Builds from (label, score) pairs with generated clip ids.
    pub fn from_labeled(scores: &[(Label, f64)]) -> Result<Self, MetricsError> {
        Self::new(
            scores
                .iter()
                .enumerate()
                .map(|(i, &(label, score))| ScoreEntry {
                    clip_id: format!("s{i}"),
                    label,
                    score,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn label_counts(&self) -> (usize, usize) {
        let spoof = self.entries.iter().filter(|e| e.label == Label::Spoof).count();
        (self.entries.len() - spoof, spoof)
    }

    /// Writes `clip_id,label,score` CSV with a header line.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.entries {
            w.write_record([e.clip_id.as_str(), e.label.as_str(), &e.score.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        // In-memory writes cannot fail.
        self.write_csv(&mut buf).expect("in-memory CSV write");
        let mut text = String::from("clip_id,label,score\n");
        text.push_str(std::str::from_utf8(&buf).expect("CSV is UTF-8"));
        text
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Reads `clip_id,label,score` CSV; labels may be names or 0/1.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, MetricsError> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let expected = ["clip_id", "label", "score"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(MetricsError::Parse {
                line: 1,
                reason: format!(
                    "expected header clip_id,label,score, got {:?}",
                    headers.iter().collect::<Vec<_>>()
                ),
            });
        }
        let mut entries = Vec::new();
        for record in r.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let field = |i: usize| record.get(i).unwrap_or("");
            let label = field(1)
                .parse::<Label>()
                .map_err(|reason| MetricsError::Parse { line, reason })?;
            let score = field(2).parse::<f64>().map_err(|e| MetricsError::Parse {
                line,
                reason: format!("score {:?}: {e}", field(2)),
            })?;
            entries.push(ScoreEntry {
                clip_id: field(0).to_string(),
                label,
                score,
            });
        }
        Self::new(entries)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    /// May be `+inf` (nothing flagged as spoof).
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub fnr: f64,
}

/// Sorted (score, is_spoof) pairs with bonafide and spoof totals.
type SortedScores = (Vec<(f64, bool)>, usize, usize);

fn sorted_scores(scores: &ScoreSet) -> Result<SortedScores, MetricsError> {
    let (bonafide, spoof) = scores.label_counts();
    if bonafide == 0 || spoof == 0 {
        return Err(MetricsError::SingleLabel { bonafide, spoof });
    }
    let mut v: Vec<(f64, bool)> = scores
        .entries
        .iter()
        .map(|e| (e.score, e.label == Label::Spoof))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok((v, bonafide, spoof))
}

/// One point per candidate threshold, ascending; `+inf` last.
pub fn roc_points(scores: &ScoreSet) -> Result<Vec<RocPoint>, MetricsError> {
    let (sorted, n_bona, n_spoof) = sorted_scores(scores)?;
    let mut points = Vec::new();
    // Counts of each class strictly below the current threshold.
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(RocPoint {
            threshold: t,
            fpr: (n_bona - bona_below) as f64 / n_bona as f64,
            fnr: spoof_below as f64 / n_spoof as f64,
        });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                spoof_below += 1;
            } else {
                bona_below += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        fnr: 1.0,
    });
    Ok(points)
}

pub fn compute_eer(scores: &ScoreSet) -> Result<EerResult, MetricsError> {
    let points = roc_points(scores)?;
    let mut best = points[0];
    for p in &points[1..] {
        let (d, bd) = ((p.fpr - p.fnr).abs(), (best.fpr - best.fnr).abs());
        // Thresholds ascend, so on a full tie the earlier point already wins.
        if d < bd || (d == bd && p.fpr < best.fpr) {
            best = *p;
        }
    }
    Ok(EerResult {
        eer: (best.fpr + best.fnr) / 2.0,
        threshold: best.threshold,
        fpr: best.fpr,
        fnr: best.fnr,
    })
}
