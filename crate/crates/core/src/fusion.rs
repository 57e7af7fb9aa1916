//! Two-branch fusion model: per-view CNN front ends, linear projections to
//! `D`, outer-product (bilinear) pooling, and an FCN head over the
//! row-major flattened `D x D` interaction map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AlignedPair;
use crate::metrics::ScoreSet;
use crate::model::{check_labels, Backward, Classifier, PairBatch};
use crate::nn::{
    relu_backward_in_place, relu_in_place, softmax, softmax_cross_entropy_batch, Batch, DenseLayer, Parameters, Scalar,
    ShapeError,
};
use crate::probes::{score_examples, ConvFrontEnd, FrontTrace, ProbeArch};
use crate::train::{fit, TrainError, TrainHistory, TrainingHyper};

/// Outer product of two equal-length vectors, kept alongside its factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearMap<T> {
    p: Vec<T>,
    q: Vec<T>,
    result: Vec<T>,
}

impl<T: Scalar> BilinearMap<T> {
    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[T] {
        &self.p
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.result[flat_index(i, j, self.dim())]
    }

    /// Row-major flattening, length `D * D`.
    pub fn flatten(&self) -> &[T] {
        &self.result
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        unflatten(&self.result, self.dim()).expect("square by construction")
    }
}

/// `BP[i][j] = p[i] * q[j]`.
pub fn bilinear_pool<T: Scalar>(p: &[T], q: &[T]) -> Result<BilinearMap<T>, ShapeError> {
    if p.len() != q.len() {
        return Err(ShapeError::Mismatch {
            what: "bilinear pooling factor length",
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut result = Vec::with_capacity(p.len() * q.len());
    for &pi in p {
        for &qj in q {
            result.push(pi * qj);
        }
    }
    Ok(BilinearMap {
        p: p.to_vec(),
        q: q.to_vec(),
        result,
    })
}

pub fn flat_index(i: usize, j: usize, d: usize) -> usize {
    i * d + j
}

pub fn unflat_index(k: usize, d: usize) -> (usize, usize) {
    (k / d, k % d)
}

/// Inverse of row-major flattening.
pub fn unflatten<T: Scalar>(flat: &[T], d: usize) -> Result<Vec<Vec<T>>, ShapeError> {
    if d == 0 || flat.len() != d * d {
        return Err(ShapeError::Mismatch {
            what: "flattened square map length",
            expected: d * d,
            found: flat.len(),
        });
    }
    Ok(flat.chunks(d).map(<[T]>::to_vec).collect())
}

/// Batched outer product: feature `i*D + j` of sample `b` is `p[i,b] * q[j,b]`.
pub fn bilinear_pool_batch<T: Scalar>(p: &Batch<T>, q: &Batch<T>) -> Batch<T> {
    assert_eq!(p.features(), q.features(), "bilinear factor dims");
    assert_eq!(p.size(), q.size(), "bilinear batch");
    let (d, n) = (p.features(), p.size());
    let mut z = Batch::zeros(d * d, n);
    for i in 0..d {
        let pi = p.row(i);
        for j in 0..d {
            let qj = q.row(j);
            for ((zv, &a), &b) in z.row_mut(flat_index(i, j, d)).iter_mut().zip(pi).zip(qj) {
                *zv = a * b;
            }
        }
    }
    z
}

/// Gradients of the factors given the gradient of the flattened map.
pub fn bilinear_backward_batch<T: Scalar>(grad: &Batch<T>, p: &Batch<T>, q: &Batch<T>) -> (Batch<T>, Batch<T>) {
    let (d, n) = (p.features(), p.size());
    assert_eq!(grad.features(), d * d, "bilinear grad features");
    let mut dp = Batch::zeros(d, n);
    let mut dq = Batch::zeros(d, n);
    for i in 0..d {
        for j in 0..d {
            let g = grad.row(flat_index(i, j, d));
            let (pi, qj) = (p.row(i), q.row(j));
            for (b, &gv) in g.iter().enumerate() {
                dp.data_mut()[i * n + b] += gv * qj[b];
                dq.data_mut()[j * n + b] += gv * pi[b];
            }
        }
    }
    (dp, dq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MioArch {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub projection_dim: usize,
    pub head_hidden: usize,
}

impl Default for MioArch {
    fn default() -> Self {
        Self {
            filters: 32,
            kernel: 3,
            pool: 2,
            projection_dim: 120,
            head_hidden: 256,
        }
    }
}

impl MioArch {
    fn front(&self) -> ProbeArch {
        ProbeArch {
            hidden: self.head_hidden,
            filters: self.filters,
            kernel: self.kernel,
            pool: self.pool,
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        self.front().validate()?;
        if self.projection_dim == 0 {
            return Err(ShapeError::Config("projection dim must be positive".into()));
        }
        Ok(())
    }
}

/// Conv front end followed by a linear projection to `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MioBranch<T> {
    pub front: ConvFrontEnd<T>,
    pub projection: DenseLayer<T>,
}

#[derive(Debug, Clone)]
pub struct BranchTrace<T> {
    pub front: FrontTrace<T>,
    pub projected: Batch<T>,
}

impl<T: Scalar> MioBranch<T> {
    fn init(in_dim: usize, arch: &MioArch, rng: &mut ChaCha8Rng) -> Result<Self, ShapeError> {
        let front = ConvFrontEnd::init(in_dim, &arch.front(), rng)?;
        let projection = DenseLayer::glorot(front.out_dim(), arch.projection_dim, rng);
        Ok(Self { front, projection })
    }

    fn zeros(in_dim: usize, arch: &MioArch) -> Result<Self, ShapeError> {
        let front = ConvFrontEnd::zeros(in_dim, &arch.front())?;
        let projection = DenseLayer::zeros(front.out_dim(), arch.projection_dim);
        Ok(Self { front, projection })
    }

    pub fn in_dim(&self) -> usize {
        self.front.in_dim()
    }

    pub fn trace(&self, x: &Batch<T>) -> BranchTrace<T> {
        let front = self.front.trace(x);
        let projected = self.projection.forward_batch(&front.pooled);
        BranchTrace { front, projected }
    }

    fn backward(
        &self,
        x: &Batch<T>,
        trace: &BranchTrace<T>,
        grad_projected: &Batch<T>,
        grads: &mut MioBranch<T>,
        want_input_grad: bool,
    ) -> Option<Batch<T>> {
        let dpooled = self
            .projection
            .backward_batch(&trace.front.pooled, grad_projected, &mut grads.projection, true)
            .expect("input gradient requested");
        self.front
            .backward(x, &trace.front, &dpooled, &mut grads.front, want_input_grad)
    }

    fn cast<U: Scalar>(&self) -> MioBranch<U> {
        MioBranch {
            front: self.front.cast(),
            projection: self.projection.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for MioBranch<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut t = self.front.tensors();
        t.extend(self.projection.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.front.tensors_mut();
        t.extend(self.projection.tensors_mut());
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MioModel<T = f32> {
    pub branch_a: MioBranch<T>,
    pub branch_b: MioBranch<T>,
    /// `Dense(D*D -> head_hidden)`, relu.
    pub head_hidden: DenseLayer<T>,
    /// `Dense(head_hidden -> 2)`, softmax.
    pub head_output: DenseLayer<T>,
}

#[derive(Debug, Clone)]
pub struct MioTrace<T> {
    pub a: BranchTrace<T>,
    pub b: BranchTrace<T>,
    pub pooled: Batch<T>,
    pub hidden_pre: Batch<T>,
    pub hidden: Batch<T>,
    pub logits: Batch<T>,
}

impl<T: Scalar> MioModel<T> {
    pub fn init(dim_a: usize, dim_b: usize, arch: &MioArch, seed: u64) -> Result<Self, ShapeError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch_a = MioBranch::init(dim_a, arch, &mut rng)?;
        let branch_b = MioBranch::init(dim_b, arch, &mut rng)?;
        let d = arch.projection_dim;
        let head_hidden = DenseLayer::glorot(d * d, arch.head_hidden, &mut rng);
        let head_output = DenseLayer::glorot(arch.head_hidden, 2, &mut rng);
        Ok(Self {
            branch_a,
            branch_b,
            head_hidden,
            head_output,
        })
    }

    /// All-zero parameters: every pair scores exactly 0.5.
    pub fn zeros(dim_a: usize, dim_b: usize, arch: &MioArch) -> Result<Self, ShapeError> {
        arch.validate()?;
        let d = arch.projection_dim;
        Ok(Self {
            branch_a: MioBranch::zeros(dim_a, arch)?,
            branch_b: MioBranch::zeros(dim_b, arch)?,
            head_hidden: DenseLayer::zeros(d * d, arch.head_hidden),
            head_output: DenseLayer::zeros(arch.head_hidden, 2),
        })
    }

    pub fn projection_dim(&self) -> usize {
        self.branch_a.projection.out_dim()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.branch_a.in_dim(), self.branch_b.in_dim())
    }

    pub fn arch(&self) -> MioArch {
        let conv = &self.branch_a.front.conv;
        MioArch {
            filters: conv.filters(),
            kernel: conv.width(),
            pool: self.branch_a.front.pool,
            projection_dim: self.projection_dim(),
            head_hidden: self.head_hidden.out_dim(),
        }
    }

    pub fn trace(&self, x: &PairBatch<T>) -> Result<MioTrace<T>, ShapeError> {
        let (da, db) = self.dims();
        for (what, expected, batch) in [("fusion view a dim", da, &x.a), ("fusion view b dim", db, &x.b)] {
            if batch.features() != expected {
                return Err(ShapeError::Mismatch {
                    what,
                    expected,
                    found: batch.features(),
                });
            }
        }
        if x.a.size() != x.b.size() {
            return Err(ShapeError::Mismatch {
                what: "fusion view b batch size",
                expected: x.a.size(),
                found: x.b.size(),
            });
        }
        let a = self.branch_a.trace(&x.a);
        let b = self.branch_b.trace(&x.b);
        let pooled = bilinear_pool_batch(&a.projected, &b.projected);
        let hidden_pre = self.head_hidden.forward_batch(&pooled);
        let mut hidden = hidden_pre.clone();
        relu_in_place(&mut hidden);
        let logits = self.head_output.forward_batch(&hidden);
        Ok(MioTrace {
            a,
            b,
            pooled,
            hidden_pre,
            hidden,
            logits,
        })
    }

    pub fn cast<U: Scalar>(&self) -> MioModel<U> {
        MioModel {
            branch_a: self.branch_a.cast(),
            branch_b: self.branch_b.cast(),
            head_hidden: self.head_hidden.cast(),
            head_output: self.head_output.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for MioModel<T> {
    fn tensors(&self) -> Vec<&[T]> {
        let mut t = self.branch_a.tensors();
        t.extend(self.branch_b.tensors());
        t.extend(self.head_hidden.tensors());
        t.extend(self.head_output.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut t = self.branch_a.tensors_mut();
        t.extend(self.branch_b.tensors_mut());
        t.extend(self.head_hidden.tensors_mut());
        t.extend(self.head_output.tensors_mut());
        t
    }
}

impl<T: Scalar> Classifier<T> for MioModel<T> {
    type Input = PairBatch<T>;

    fn logits(&self, x: &PairBatch<T>) -> Result<Batch<T>, ShapeError> {
        Ok(self.trace(x)?.logits)
    }

    fn backward(
        &self,
        x: &PairBatch<T>,
        labels: &[usize],
        want_input_grad: bool,
    ) -> Result<Backward<Self, PairBatch<T>, T>, ShapeError> {
        check_labels(x.a.size(), labels)?;
        let tr = self.trace(x)?;
        let (loss_sum, _, dlogits) = softmax_cross_entropy_batch(&tr.logits, labels);
        let mut grads = self.zeros_like();
        let mut dh = self
            .head_output
            .backward_batch(&tr.hidden, &dlogits, &mut grads.head_output, true)
            .expect("input gradient requested");
        relu_backward_in_place(&mut dh, &tr.hidden_pre);
        let dz = self
            .head_hidden
            .backward_batch(&tr.pooled, &dh, &mut grads.head_hidden, true)
            .expect("input gradient requested");
        let (dp, dq) = bilinear_backward_batch(&dz, &tr.a.projected, &tr.b.projected);
        let da = self
            .branch_a
            .backward(&x.a, &tr.a, &dp, &mut grads.branch_a, want_input_grad);
        let db = self
            .branch_b
            .backward(&x.b, &tr.b, &dq, &mut grads.branch_b, want_input_grad);
        Ok(Backward {
            loss_sum,
            grads,
            input_grad: da.zip(db).map(|(a, b)| PairBatch { a, b }),
        })
    }
}

/// Class probabilities for one pair of vectors.
pub fn mio_forward<T: Scalar>(model: &MioModel<T>, x_a: &[T], x_b: &[T]) -> Result<Vec<T>, ShapeError> {
    let input = PairBatch {
        a: Batch::from_sample(x_a),
        b: Batch::from_sample(x_b),
    };
    Ok(softmax(&model.logits(&input)?.into_data()))
}

pub fn train_mio(
    train: &[AlignedPair<'_>],
    val: &[AlignedPair<'_>],
    hyper: &TrainingHyper,
    arch: &MioArch,
) -> Result<(MioModel, TrainHistory), TrainError> {
    let (da, db) = match train.first() {
        Some(p) => (p.a.len(), p.b.len()),
        None => return Err(TrainError::EmptyTrain),
    };
    if let Some(v) = val.first() {
        if v.a.len() != da || v.b.len() != db {
            return Err(TrainError::DimMismatch {
                what: "validation pair dims",
                expected: da,
                found: v.a.len(),
            });
        }
    }
    let model = MioModel::init(da, db, arch, hyper.init_seed)?;
    fit(model, train, val, hyper)
}

pub fn score_mio(model: &MioModel, pairs: &[AlignedPair<'_>]) -> Result<ScoreSet, ShapeError> {
    score_examples(model, pairs)
}
