//! MIOM model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MIOM" | version u16 = 1 | arch tag u8 (1 fcn, 2 cnn, 3 mio)
//! hyper: epochs u32 | batch u32 | lr f64 | beta1 f64 | beta2 f64 | eps f64
//!        | shuffle_seed u64 | init_seed u64
//! arch dims, u32 each:
//!   fcn: in_dim, hidden
//!   cnn: in_dim, filters, kernel, pool, hidden
//!   mio: dim_a, dim_b, filters, kernel, pool, projection D, head_hidden
//! tensor count u32, then per tensor: rank u8 | rank x u32 dims | f32 data
//! ```
//!
//! Tensors appear in [`Parameters::tensors`] order.

use std::path::Path;

use thiserror::Error;

use crate::binio::{put_u32, Reader, Truncated};
use crate::fusion::{MioArch, MioModel};
use crate::nn::{Conv1dLayer, DenseLayer, Parameters, ShapeError};
use crate::probes::{CnnProbe, FcnProbe, Probe, ProbeArch};
use crate::train::TrainingHyper;

pub const MAGIC: &[u8; 4] = b"MIOM";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?} (expected \"MIOM\")")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown architecture tag {0}")]
    UnknownArch(u8),
    #[error("truncated {field} at byte offset {offset}: need {needed} bytes, {available} left")]
    Truncated {
        field: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("tensor count {found} does not match architecture ({expected})")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor {index} at byte offset {offset} has shape {found:?}, architecture expects {expected:?}")]
    TensorShape {
        index: usize,
        offset: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {index} contains a non-finite value")]
    NonFinite { index: usize },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("invalid architecture: {0}")]
    Arch(#[from] ShapeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<Truncated> for CheckpointError {
    fn from(t: Truncated) -> Self {
        CheckpointError::Truncated {
            field: t.field,
            offset: t.offset,
            needed: t.needed,
            available: t.available,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum CheckpointModel {
    Fcn(FcnProbe<f32>),
    Cnn(CnnProbe<f32>),
    Mio(MioModel<f32>),
}

impl From<Probe> for CheckpointModel {
    fn from(p: Probe) -> Self {
        match p {
            Probe::Fcn(p) => CheckpointModel::Fcn(p),
            Probe::Cnn(p) => CheckpointModel::Cnn(p),
        }
    }
}

impl CheckpointModel {
    pub fn tag(&self) -> u8 {
        match self {
            CheckpointModel::Fcn(_) => 1,
            CheckpointModel::Cnn(_) => 2,
            CheckpointModel::Mio(_) => 3,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            CheckpointModel::Fcn(_) => "fcn",
            CheckpointModel::Cnn(_) => "cnn",
            CheckpointModel::Mio(_) => "mio",
        }
    }

    pub fn into_probe(self) -> Option<Probe> {
        match self {
            CheckpointModel::Fcn(p) => Some(Probe::Fcn(p)),
            CheckpointModel::Cnn(p) => Some(Probe::Cnn(p)),
            CheckpointModel::Mio(_) => None,
        }
    }

    fn arch_dims(&self) -> Vec<usize> {
        match self {
            CheckpointModel::Fcn(p) => vec![p.in_dim(), p.hidden.out_dim()],
            CheckpointModel::Cnn(p) => {
                let conv = &p.front.conv;
                vec![
                    p.in_dim(),
                    conv.filters(),
                    conv.width(),
                    p.front.pool,
                    p.hidden.out_dim(),
                ]
            }
            CheckpointModel::Mio(m) => {
                let (a, b) = m.dims();
                let arch = m.arch();
                vec![
                    a,
                    b,
                    arch.filters,
                    arch.kernel,
                    arch.pool,
                    arch.projection_dim,
                    arch.head_hidden,
                ]
            }
        }
    }

    fn tensors(&self) -> Vec<&[f32]> {
        match self {
            CheckpointModel::Fcn(p) => p.tensors(),
            CheckpointModel::Cnn(p) => p.tensors(),
            CheckpointModel::Mio(m) => m.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        match self {
            CheckpointModel::Fcn(p) => p.tensors_mut(),
            CheckpointModel::Cnn(p) => p.tensors_mut(),
            CheckpointModel::Mio(m) => m.tensors_mut(),
        }
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        fn dense(l: &DenseLayer<f32>, out: &mut Vec<Vec<usize>>) {
            out.push(vec![l.out_dim(), l.in_dim()]);
            out.push(vec![l.out_dim()]);
        }
        fn conv(l: &Conv1dLayer<f32>, out: &mut Vec<Vec<usize>>) {
            out.push(vec![l.filters(), l.in_channels(), l.width()]);
            out.push(vec![l.filters()]);
        }
        let mut s = Vec::new();
        match self {
            CheckpointModel::Fcn(p) => {
                dense(&p.hidden, &mut s);
                dense(&p.output, &mut s);
            }
            CheckpointModel::Cnn(p) => {
                conv(&p.front.conv, &mut s);
                dense(&p.hidden, &mut s);
                dense(&p.output, &mut s);
            }
            CheckpointModel::Mio(m) => {
                for branch in [&m.branch_a, &m.branch_b] {
                    conv(&branch.front.conv, &mut s);
                    dense(&branch.projection, &mut s);
                }
                dense(&m.head_hidden, &mut s);
                dense(&m.head_output, &mut s);
            }
        }
        s
    }

    /// Zero model of the architecture described by `tag` and `dims`.
    fn blank(tag: u8, dims: &[usize]) -> Result<Self, CheckpointError> {
        Ok(match tag {
            1 => CheckpointModel::Fcn(FcnProbe::zeros(
                dims[0],
                &ProbeArch {
                    hidden: dims[1],
                    ..ProbeArch::default()
                },
            )?),
            2 => CheckpointModel::Cnn(CheckpointModel::blank_cnn(dims)?),
            3 => CheckpointModel::Mio(MioModel::zeros(
                dims[0],
                dims[1],
                &MioArch {
                    filters: dims[2],
                    kernel: dims[3],
                    pool: dims[4],
                    projection_dim: dims[5],
                    head_hidden: dims[6],
                },
            )?),
            other => return Err(CheckpointError::UnknownArch(other)),
        })
    }

    fn blank_cnn(dims: &[usize]) -> Result<CnnProbe<f32>, ShapeError> {
        CnnProbe::zeros(
            dims[0],
            &ProbeArch {
                filters: dims[1],
                kernel: dims[2],
                pool: dims[3],
                hidden: dims[4],
            },
        )
    }
}

/// Parameter count implied by the architecture dims, saturating.
fn implied_parameters(tag: u8, d: &[usize]) -> usize {
    let mul = |a: usize, b: usize| a.saturating_mul(b);
    let dense = |i: usize, o: usize| mul(i, o).saturating_add(o);
    let front = |f: usize, k: usize| mul(f, k).saturating_add(f);
    let flat = |dim: usize, f: usize, pool: usize| mul(f, dim / pool.max(1));
    match tag {
        1 => dense(d[0], d[1]).saturating_add(dense(d[1], 2)),
        2 => front(d[1], d[2])
            .saturating_add(dense(flat(d[0], d[1], d[3]), d[4]))
            .saturating_add(dense(d[4], 2)),
        _ => {
            let branch = |dim: usize| front(d[2], d[3]).saturating_add(dense(flat(dim, d[2], d[4]), d[5]));
            branch(d[0])
                .saturating_add(branch(d[1]))
                .saturating_add(dense(mul(d[5], d[5]), d[6]))
                .saturating_add(dense(d[6], 2))
        }
    }
}

fn arch_dim_count(tag: u8) -> Result<usize, CheckpointError> {
    match tag {
        1 => Ok(2),
        2 => Ok(5),
        3 => Ok(7),
        other => Err(CheckpointError::UnknownArch(other)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: TrainingHyper,
    pub model: CheckpointModel,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ckpt.model.tag());
    let h = &ckpt.hyper;
    put_u32(&mut out, h.epochs);
    put_u32(&mut out, h.batch_size);
    for v in [h.learning_rate, h.beta1, h.beta2, h.epsilon] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&h.shuffle_seed.to_le_bytes());
    out.extend_from_slice(&h.init_seed.to_le_bytes());
    for d in ckpt.model.arch_dims() {
        put_u32(&mut out, d);
    }
    let tensors = ckpt.model.tensors();
    put_u32(&mut out, tensors.len());
    for (shape, data) in ckpt.model.shapes().iter().zip(tensors) {
        out.push(shape.len() as u8);
        for &d in shape {
            put_u32(&mut out, d);
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader::new(bytes);
    let magic = r.take("magic", 4)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let tag = r.u8("architecture tag")?;
    let dim_count = arch_dim_count(tag)?;
    let epochs = r.u32("epochs")? as usize;
    let batch_size = r.u32("batch size")? as usize;
    let hyper = TrainingHyper {
        epochs,
        batch_size,
        learning_rate: r.f64("learning rate")?,
        beta1: r.f64("beta1")?,
        beta2: r.f64("beta2")?,
        epsilon: r.f64("epsilon")?,
        shuffle_seed: r.u64("shuffle seed")?,
        init_seed: r.u64("init seed")?,
    };
    let dims: Vec<usize> = (0..dim_count)
        .map(|_| r.u32("architecture dims").map(|d| d as usize))
        .collect::<Result<_, _>>()?;
    let needed = implied_parameters(tag, &dims).saturating_mul(4);
    if needed > r.remaining() {
        return Err(CheckpointError::Truncated {
            field: "tensor data",
            offset: r.position(),
            needed,
            available: r.remaining(),
        });
    }
    let mut model = CheckpointModel::blank(tag, &dims)?;
    let shapes = model.shapes();
    let count = r.u32("tensor count")? as usize;
    if count != shapes.len() {
        return Err(CheckpointError::TensorCount {
            expected: shapes.len(),
            found: count,
        });
    }
    let mut slots = model.tensors_mut();
    for (index, (expected, slot)) in shapes.into_iter().zip(slots.iter_mut()).enumerate() {
        let offset = r.position();
        let rank = r.u8("tensor rank")? as usize;
        let found: Vec<usize> = (0..rank)
            .map(|_| r.u32("tensor dims").map(|d| d as usize))
            .collect::<Result<_, _>>()?;
        if found != expected {
            return Err(CheckpointError::TensorShape {
                index,
                offset,
                expected,
                found,
            });
        }
        let data = r.f32s("tensor data", slot.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::NonFinite { index });
        }
        slot.copy_from_slice(&data);
    }
    drop(slots);
    if r.remaining() > 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    Ok(Checkpoint { hyper, model })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
