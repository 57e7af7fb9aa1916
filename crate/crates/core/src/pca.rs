//! Principal component analysis for matching embedding widths across corpora.
//!
//! Fitting eigendecomposes the sample covariance (`n - 1` normalization) of
//! the training corpus. Components are ordered by descending variance and
//! sign-normalized so that each row's entry of largest magnitude is
//! non-negative (ties: lowest index). Persisted as an MIOP block:
//!
//! ```text
//! magic "MIOP" | version u16 = 1 | flags u16 (bit 0: rank deficient)
//! dim u32 | k u32 | rank u32 | mean dim x f64 | components k*dim x f64
//! | explained variance k x f64
//! ```

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::binio::{put_u32, Reader, Truncated};
use crate::corpus::{CorpusError, EmbeddingCorpus, EmbeddingRecord};

pub const MAGIC: &[u8; 4] = b"MIOP";
pub const VERSION: u16 = 1;
const FLAG_RANK_DEFICIENT: u16 = 1;

/// Target widths used for cross-corpus matching.
pub const DEFAULT_KS: [usize; 2] = [120, 240];

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("k = {k} exceeds min(dim = {dim}, n - 1 = {max_n})")]
    KTooLarge { k: usize, dim: usize, max_n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("PCA needs at least 2 records, got {0}")]
    TooFewRecords(usize),
    #[error("corpus dim {found} does not match transform dim {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("bad magic {found:?} (expected \"MIOP\")")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported PCA block version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated {field} at byte offset {offset}: need {needed} bytes, {available} left")]
    Truncated {
        field: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("invalid PCA block: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<Truncated> for PcaError {
    fn from(t: Truncated) -> Self {
        PcaError::Truncated {
            field: t.field,
            offset: t.offset,
            needed: t.needed,
            available: t.available,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaTransform {
    dim: usize,
    k: usize,
    mean: Vec<f64>,
    /// Row-major `[k x dim]`.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
    rank: usize,
}

/// Eigenvalues at or below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

impl PcaTransform {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim..(i + 1) * self.dim]
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Numerical rank of the training covariance.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.k
    }

    pub fn warnings(&self) -> Vec<String> {
        if self.is_rank_deficient() {
            vec![format!(
                "covariance rank {} is below k = {}; the trailing {} component(s) carry no variance",
                self.rank,
                self.k,
                self.k - self.rank
            )]
        } else {
            Vec::new()
        }
    }

    /// `components * (v - mean)`.
    pub fn project(&self, v: &[f32]) -> Result<Vec<f64>, PcaError> {
        if v.len() != self.dim {
            return Err(PcaError::DimMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(&x, m)| x as f64 - m).collect();
        Ok((0..self.k)
            .map(|i| self.component(i).iter().zip(&centered).map(|(c, x)| c * x).sum())
            .collect())
    }

    /// `components^T * y + mean`.
    pub fn reconstruct(&self, y: &[f64]) -> Result<Vec<f64>, PcaError> {
        if y.len() != self.k {
            return Err(PcaError::DimMismatch {
                expected: self.k,
                found: y.len(),
            });
        }
        let mut out = self.mean.clone();
        for (i, &yi) in y.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.component(i)) {
                *o += yi * c;
            }
        }
        Ok(out)
    }

    /// Projects every record; ptm_id gains a `+pca<k>` suffix.
    pub fn apply(&self, corpus: &EmbeddingCorpus) -> Result<EmbeddingCorpus, PcaError> {
        if corpus.dim() != self.dim {
            return Err(PcaError::DimMismatch {
                expected: self.dim,
                found: corpus.dim(),
            });
        }
        let records = corpus
            .records()
            .iter()
            .map(|r| {
                let y = self.project(&r.vector)?;
                Ok(EmbeddingRecord::new(
                    r.clip_id.clone(),
                    r.label,
                    y.into_iter().map(|v| v as f32).collect(),
                ))
            })
            .collect::<Result<Vec<_>, PcaError>>()?;
        Ok(EmbeddingCorpus::new(
            corpus.name(),
            format!("{}+pca{}", corpus.ptm_id(), self.k),
            self.k,
            corpus.split(),
            records,
        )?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * (self.dim + self.k * self.dim + self.k));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let flags = if self.is_rank_deficient() {
            FLAG_RANK_DEFICIENT
        } else {
            0
        };
        out.extend_from_slice(&flags.to_le_bytes());
        put_u32(&mut out, self.dim);
        put_u32(&mut out, self.k);
        put_u32(&mut out, self.rank);
        for v in self.mean.iter().chain(&self.components).chain(&self.explained_variance) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, PcaError> {
        let mut r = Reader::new(bytes);
        let magic = r.take("magic", 4)?;
        if magic != MAGIC {
            return Err(PcaError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(PcaError::UnsupportedVersion(version));
        }
        let flags = r.u16("flags")?;
        let dim = r.u32("dim")? as usize;
        let k = r.u32("k")? as usize;
        let rank = r.u32("rank")? as usize;
        if dim == 0 || k == 0 || k > dim || rank > dim {
            return Err(PcaError::Invalid(format!("dim {dim}, k {k}, rank {rank}")));
        }
        let needed = 8usize.saturating_mul(dim.saturating_add(k.saturating_mul(dim)).saturating_add(k));
        if needed < r.remaining() {
            return Err(PcaError::Invalid(format!(
                "{} trailing bytes after the {needed}-byte payload",
                r.remaining() - needed
            )));
        }
        let mean = r.f64s("mean", dim)?;
        let components = r.f64s("components", k * dim)?;
        let explained_variance = r.f64s("explained variance", k)?;
        if mean
            .iter()
            .chain(&components)
            .chain(&explained_variance)
            .any(|v| !v.is_finite())
        {
            return Err(PcaError::Invalid("non-finite value".into()));
        }
        let t = Self {
            dim,
            k,
            mean,
            components,
            explained_variance,
            rank,
        };
        if (flags & FLAG_RANK_DEFICIENT != 0) != t.is_rank_deficient() || flags & !FLAG_RANK_DEFICIENT != 0 {
            return Err(PcaError::Invalid(format!("flags {flags:#06x} disagree with rank")));
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PcaError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|source| PcaError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PcaError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| PcaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

/// Fits the top-`k` principal components of `corpus`.
pub fn fit_pca(corpus: &EmbeddingCorpus, k: usize) -> Result<PcaTransform, PcaError> {
    let rows: Vec<&[f32]> = corpus.records().iter().map(|r| r.vector.as_slice()).collect();
    fit_pca_rows(&rows, corpus.dim(), k)
}

/// Fits on raw rows of width `dim`.
pub fn fit_pca_rows(rows: &[&[f32]], dim: usize, k: usize) -> Result<PcaTransform, PcaError> {
    let n = rows.len();
    if n < 2 {
        return Err(PcaError::TooFewRecords(n));
    }
    if k == 0 {
        return Err(PcaError::ZeroK);
    }
    if k > dim.min(n - 1) {
        return Err(PcaError::KTooLarge { k, dim, max_n: n - 1 });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(PcaError::DimMismatch {
            expected: dim,
            found: bad.len(),
        });
    }

    let mut mean = vec![0.0f64; dim];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r.iter()) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0f64; dim];
    for r in rows {
        for ((c, &x), m) in centered.iter_mut().zip(r.iter()).zip(&mean) {
            *c = x as f64 - m;
        }
        for j in 0..dim {
            let cj = centered[j];
            if cj == 0.0 {
                continue;
            }
            let col = cov.column_mut(j);
            for (dst, &ci) in col.into_iter().zip(&centered).skip(j) {
                *dst += ci * cj;
            }
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    for j in 0..dim {
        for i in j..dim {
            let v = cov[(i, j)] * scale;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOLERANCE * top && eig.eigenvalues[i] > 0.0)
        .count();

    let mut components = Vec::with_capacity(k * dim);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in &order[..k] {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            for x in &mut v {
                *x = -*x;
            }
        }
        components.extend(v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaTransform {
        dim,
        k,
        mean,
        components,
        explained_variance,
        rank,
    })
}
