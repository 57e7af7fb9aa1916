//! Single-representation probing heads: an FCN and a 1-D CNN over one embedding.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingCorpus;
use crate::metrics::{ScoreEntry, ScoreSet};
use crate::model::{check_labels, spoof_scores, Backward, Classifier, Examples};
use crate::nn::{
    maxpool1d_backward, maxpool1d_batch, relu_backward_in_place, relu_in_place, softmax_cross_entropy_batch, Batch,
    Conv1dLayer, DenseLayer, Padding, Parameters, Scalar, ShapeError,
};
use crate::train::{fit, TrainError, TrainHistory, TrainingHyper};

/// Layer sizes shared by the probes and the fusion branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeArch {
    pub hidden: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl Default for ProbeArch {
    fn default() -> Self {
        Self {
            hidden: 128,
            filters: 32,
            kernel: 3,
            pool: 2,
        }
    }
}

impl ProbeArch {
    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.hidden == 0 || self.filters == 0 || self.kernel == 0 || self.pool == 0 {
            return Err(ShapeError::Config(format!(
                "probe sizes must be positive (hidden {}, filters {}, kernel {}, pool {})",
                self.hidden, self.filters, self.kernel, self.pool
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Fcn,
    Cnn,
}

impl ProbeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeKind::Fcn => "fcn",
            ProbeKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fcn" => Ok(ProbeKind::Fcn),
            "cnn" => Ok(ProbeKind::Cnn),
            other => Err(format!("unknown probe kind {other:?} (expected fcn or cnn)")),
        }
    }
}

fn check_input(what: &'static str, expected: usize, x: &Batch<impl Scalar>) -> Result<(), ShapeError> {
    if x.features() != expected {
        return Err(ShapeError::Mismatch {
            what,
            expected,
            found: x.features(),
        });
    }
    Ok(())
}

/// `Dense(in -> hidden) -> relu -> Dense(hidden -> 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcnProbe<T> {
    pub hidden: DenseLayer<T>,
    pub output: DenseLayer<T>,
}

/// Intermediate activations of an FCN forward pass.
#[derive(Debug, Clone)]
pub struct FcnTrace<T> {
    pub hidden_pre: Batch<T>,
    pub hidden: Batch<T>,
    pub logits: Batch<T>,
}

impl<T: Scalar> FcnProbe<T> {
    pub fn init(in_dim: usize, arch: &ProbeArch, seed: u64) -> Result<Self, ShapeError> {
        arch.validate()?;
        check_dim(in_dim, 1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = DenseLayer::glorot(in_dim, arch.hidden, &mut rng);
        let output = DenseLayer::glorot(arch.hidden, 2, &mut rng);
        Ok(Self { hidden, output })
    }

    /// All-zero parameters: every input scores exactly 0.5.
    pub fn zeros(in_dim: usize, arch: &ProbeArch) -> Result<Self, ShapeError> {
        arch.validate()?;
        check_dim(in_dim, 1)?;
        Ok(Self {
            hidden: DenseLayer::zeros(in_dim, arch.hidden),
            output: DenseLayer::zeros(arch.hidden, 2),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn trace(&self, x: &Batch<T>) -> Result<FcnTrace<T>, ShapeError> {
        check_input("fcn probe input dim", self.in_dim(), x)?;
        let hidden_pre = self.hidden.forward_batch(x);
        let mut hidden = hidden_pre.clone();
        relu_in_place(&mut hidden);
        let logits = self.output.forward_batch(&hidden);
        Ok(FcnTrace {
            hidden_pre,
            hidden,
            logits,
        })
    }

    pub fn cast<U: Scalar>(&self) -> FcnProbe<U> {
        FcnProbe {
            hidden: self.hidden.cast(),
            output: self.output.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for FcnProbe<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut t = self.hidden.tensors();
        t.extend(self.output.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.hidden.tensors_mut();
        t.extend(self.output.tensors_mut());
        t
    }
}

impl<T: Scalar> Classifier<T> for FcnProbe<T> {
    type Input = Batch<T>;

    fn logits(&self, x: &Batch<T>) -> Result<Batch<T>, ShapeError> {
        Ok(self.trace(x)?.logits)
    }

    fn backward(
        &self,
        x: &Batch<T>,
        labels: &[usize],
        want_input_grad: bool,
    ) -> Result<Backward<Self, Batch<T>, T>, ShapeError> {
        check_labels(x.size(), labels)?;
        let tr = self.trace(x)?;
        let (loss_sum, _, dlogits) = softmax_cross_entropy_batch(&tr.logits, labels);
        let mut grads = self.zeros_like();
        let mut dh = self
            .output
            .backward_batch(&tr.hidden, &dlogits, &mut grads.output, true)
            .expect("input gradient requested");
        relu_backward_in_place(&mut dh, &tr.hidden_pre);
        let input_grad = self.hidden.backward_batch(x, &dh, &mut grads.hidden, want_input_grad);
        Ok(Backward {
            loss_sum,
            grads,
            input_grad,
        })
    }
}

/// `conv(1 -> filters, same) -> relu -> maxpool -> flatten`, the shared
/// front end of the CNN probe and of each fusion branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFrontEnd<T> {
    pub conv: Conv1dLayer<T>,
    pub pool: usize,
    in_dim: usize,
}

#[derive(Debug, Clone)]
pub struct FrontTrace<T> {
    /// Conv output before relu, `[filters * in_dim x batch]`.
    pub conv_pre: Batch<T>,
    /// Pooled relu activations, already flattened channel-major.
    pub pooled: Batch<T>,
    pub argmax: Vec<u32>,
}

impl<T: Scalar> ConvFrontEnd<T> {
    pub fn init(in_dim: usize, arch: &ProbeArch, rng: &mut ChaCha8Rng) -> Result<Self, ShapeError> {
        Self::check(in_dim, arch)?;
        Ok(Self {
            conv: Conv1dLayer::glorot(arch.filters, 1, arch.kernel, Padding::Same, rng),
            pool: arch.pool,
            in_dim,
        })
    }

    pub fn zeros(in_dim: usize, arch: &ProbeArch) -> Result<Self, ShapeError> {
        Self::check(in_dim, arch)?;
        Ok(Self {
            conv: Conv1dLayer::zeros(arch.filters, 1, arch.kernel, Padding::Same),
            pool: arch.pool,
            in_dim,
        })
    }

    fn check(in_dim: usize, arch: &ProbeArch) -> Result<(), ShapeError> {
        arch.validate()?;
        check_dim(in_dim, arch.pool.max(2))
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Flattened output width, `filters * floor(in_dim / pool)`.
    pub fn out_dim(&self) -> usize {
        self.conv.filters() * (self.in_dim / self.pool)
    }

    pub fn trace(&self, x: &Batch<T>) -> FrontTrace<T> {
        let conv_pre = self.conv.forward_batch(x, self.in_dim);
        let mut act = conv_pre.clone();
        relu_in_place(&mut act);
        let (pooled, argmax) = maxpool1d_batch(&act, self.conv.filters(), self.in_dim, self.pool);
        FrontTrace {
            conv_pre,
            pooled,
            argmax,
        }
    }

    pub fn backward(
        &self,
        x: &Batch<T>,
        trace: &FrontTrace<T>,
        grad_pooled: &Batch<T>,
        grads: &mut ConvFrontEnd<T>,
        want_input_grad: bool,
    ) -> Option<Batch<T>> {
        let mut dact = maxpool1d_backward(grad_pooled, &trace.argmax, trace.conv_pre.features());
        relu_backward_in_place(&mut dact, &trace.conv_pre);
        self.conv
            .backward_batch(x, self.in_dim, &dact, &mut grads.conv, want_input_grad)
    }

    pub fn cast<U: Scalar>(&self) -> ConvFrontEnd<U> {
        ConvFrontEnd {
            conv: self.conv.cast(),
            pool: self.pool,
            in_dim: self.in_dim,
        }
    }
}

impl<T: Scalar> Parameters<T> for ConvFrontEnd<T> {
    fn tensors(&self) -> Vec<&[T]> {
        self.conv.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.conv.tensors_mut()
    }
}

/// `front end -> Dense(filters*floor(in/pool) -> hidden) -> relu -> Dense(hidden -> 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnProbe<T> {
    pub front: ConvFrontEnd<T>,
    pub hidden: DenseLayer<T>,
    pub output: DenseLayer<T>,
}

#[derive(Debug, Clone)]
pub struct CnnTrace<T> {
    pub front: FrontTrace<T>,
    pub hidden_pre: Batch<T>,
    pub hidden: Batch<T>,
    pub logits: Batch<T>,
}

impl<T: Scalar> CnnProbe<T> {
    pub fn init(in_dim: usize, arch: &ProbeArch, seed: u64) -> Result<Self, ShapeError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let front = ConvFrontEnd::init(in_dim, arch, &mut rng)?;
        let hidden = DenseLayer::glorot(front.out_dim(), arch.hidden, &mut rng);
        let output = DenseLayer::glorot(arch.hidden, 2, &mut rng);
        Ok(Self { front, hidden, output })
    }

    pub fn zeros(in_dim: usize, arch: &ProbeArch) -> Result<Self, ShapeError> {
        let front = ConvFrontEnd::zeros(in_dim, arch)?;
        Ok(Self {
            hidden: DenseLayer::zeros(front.out_dim(), arch.hidden),
            output: DenseLayer::zeros(arch.hidden, 2),
            front,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.front.in_dim()
    }

    pub fn trace(&self, x: &Batch<T>) -> Result<CnnTrace<T>, ShapeError> {
        check_input("cnn probe input dim", self.in_dim(), x)?;
        let front = self.front.trace(x);
        let hidden_pre = self.hidden.forward_batch(&front.pooled);
        let mut hidden = hidden_pre.clone();
        relu_in_place(&mut hidden);
        let logits = self.output.forward_batch(&hidden);
        Ok(CnnTrace {
            front,
            hidden_pre,
            hidden,
            logits,
        })
    }

    pub fn cast<U: Scalar>(&self) -> CnnProbe<U> {
        CnnProbe {
            front: self.front.cast(),
            hidden: self.hidden.cast(),
            output: self.output.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for CnnProbe<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut t = self.front.tensors();
        t.extend(self.hidden.tensors());
        t.extend(self.output.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.front.tensors_mut();
        t.extend(self.hidden.tensors_mut());
        t.extend(self.output.tensors_mut());
        t
    }
}

impl<T: Scalar> Classifier<T> for CnnProbe<T> {
    type Input = Batch<T>;

    fn logits(&self, x: &Batch<T>) -> Result<Batch<T>, ShapeError> {
        Ok(self.trace(x)?.logits)
    }

    fn backward(
        &self,
        x: &Batch<T>,
        labels: &[usize],
        want_input_grad: bool,
    ) -> Result<Backward<Self, Batch<T>, T>, ShapeError> {
        check_labels(x.size(), labels)?;
        let tr = self.trace(x)?;
        let (loss_sum, _, dlogits) = softmax_cross_entropy_batch(&tr.logits, labels);
        let mut grads = self.zeros_like();
        let mut dh = self
            .output
            .backward_batch(&tr.hidden, &dlogits, &mut grads.output, true)
            .expect("input gradient requested");
        relu_backward_in_place(&mut dh, &tr.hidden_pre);
        let dpooled = self
            .hidden
            .backward_batch(&tr.front.pooled, &dh, &mut grads.hidden, true)
            .expect("input gradient requested");
        let input_grad = self
            .front
            .backward(x, &tr.front, &dpooled, &mut grads.front, want_input_grad);
        Ok(Backward {
            loss_sum,
            grads,
            input_grad,
        })
    }
}

fn check_dim(in_dim: usize, min: usize) -> Result<(), ShapeError> {
    if in_dim < min {
        return Err(ShapeError::Mismatch {
            what: "probe input dim (minimum)",
            expected: min,
            found: in_dim,
        });
    }
    Ok(())
}

/// Either probe kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe<T = f32> {
    Fcn(FcnProbe<T>),
    Cnn(CnnProbe<T>),
}

impl<T: Scalar> Probe<T> {
    pub fn init(kind: ProbeKind, in_dim: usize, arch: &ProbeArch, seed: u64) -> Result<Self, ShapeError> {
        Ok(match kind {
            ProbeKind::Fcn => Probe::Fcn(FcnProbe::init(in_dim, arch, seed)?),
            ProbeKind::Cnn => Probe::Cnn(CnnProbe::init(in_dim, arch, seed)?),
        })
    }

    pub fn zeros(kind: ProbeKind, in_dim: usize, arch: &ProbeArch) -> Result<Self, ShapeError> {
        Ok(match kind {
            ProbeKind::Fcn => Probe::Fcn(FcnProbe::zeros(in_dim, arch)?),
            ProbeKind::Cnn => Probe::Cnn(CnnProbe::zeros(in_dim, arch)?),
        })
    }

    pub fn kind(&self) -> ProbeKind {
        match self {
            Probe::Fcn(_) => ProbeKind::Fcn,
            Probe::Cnn(_) => ProbeKind::Cnn,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Probe::Fcn(p) => p.in_dim(),
            Probe::Cnn(p) => p.in_dim(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Probe<U> {
        match self {
            Probe::Fcn(p) => Probe::Fcn(p.cast()),
            Probe::Cnn(p) => Probe::Cnn(p.cast()),
        }
    }
}

impl<T: Scalar> Parameters<T> for Probe<T> {
    fn tensors(&self) -> Vec<&[T]> {
        match self {
            Probe::Fcn(p) => p.tensors(),
            Probe::Cnn(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Probe::Fcn(p) => p.tensors_mut(),
            Probe::Cnn(p) => p.tensors_mut(),
        }
    }
}

impl<T: Scalar> Classifier<T> for Probe<T> {
    type Input = Batch<T>;

    fn logits(&self, x: &Batch<T>) -> Result<Batch<T>, ShapeError> {
        match self {
            Probe::Fcn(p) => p.logits(x),
            Probe::Cnn(p) => p.logits(x),
        }
    }

    fn backward(
        &self,
        x: &Batch<T>,
        labels: &[usize],
        want_input_grad: bool,
    ) -> Result<Backward<Self, Batch<T>, T>, ShapeError> {
        Ok(match self {
            Probe::Fcn(p) => {
                let b = p.backward(x, labels, want_input_grad)?;
                Backward {
                    loss_sum: b.loss_sum,
                    grads: Probe::Fcn(b.grads),
                    input_grad: b.input_grad,
                }
            }
            Probe::Cnn(p) => {
                let b = p.backward(x, labels, want_input_grad)?;
                Backward {
                    loss_sum: b.loss_sum,
                    grads: Probe::Cnn(b.grads),
                    input_grad: b.input_grad,
                }
            }
        })
    }
}

/// Trains a probe of `kind`, returning the best-validation snapshot.
pub fn train_probe(
    kind: ProbeKind,
    train: &EmbeddingCorpus,
    val: &EmbeddingCorpus,
    hyper: &TrainingHyper,
    arch: &ProbeArch,
) -> Result<(Probe, TrainHistory), TrainError> {
    if val.dim() != train.dim() {
        return Err(TrainError::DimMismatch {
            what: "validation corpus dim",
            expected: train.dim(),
            found: val.dim(),
        });
    }
    let probe = Probe::init(kind, train.dim(), arch, hyper.init_seed)?;
    fit(probe, train, val, hyper)
}

/// Rows scored per forward pass when scoring a whole corpus.
pub const SCORE_CHUNK: usize = 256;

/// Spoof-class probability for every example, in example order.
pub fn score_examples<M, E>(model: &M, examples: &E) -> Result<ScoreSet, ShapeError>
where
    M: Classifier<f32>,
    E: Examples<Input = M::Input> + ?Sized,
{
    let indices: Vec<usize> = (0..examples.len()).collect();
    let mut entries = Vec::with_capacity(examples.len());
    for chunk in indices.chunks(SCORE_CHUNK) {
        let scores = spoof_scores(model, &examples.gather(chunk))?;
        for (&i, score) in chunk.iter().zip(scores) {
            entries.push(ScoreEntry {
                clip_id: examples.clip_id(i).to_string(),
                label: examples.label(i),
                score,
            });
        }
    }
    ScoreSet::new(entries).map_err(|_| ShapeError::NonFinite("model scores"))
}

/// Scores every record of `corpus` with `probe`.
pub fn score(probe: &Probe, corpus: &EmbeddingCorpus) -> Result<ScoreSet, ShapeError> {
    if corpus.dim() != probe.in_dim() {
        return Err(ShapeError::Mismatch {
            what: "scored corpus dim",
            expected: probe.in_dim(),
            found: corpus.dim(),
        });
    }
    score_examples(probe, corpus)
}
