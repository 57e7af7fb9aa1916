#![allow(dead_code)]

//! Independent oracles shared by the integration suites.

use std::path::{Path, PathBuf};

use miobench::corpus::{save_corpus, EmbeddingCorpus, Label};
use miobench::fusion::{MioArch, MioModel};
use miobench::metrics::ScoreSet;
use miobench::model::{Classifier, PairBatch};
use miobench::nn::{Batch, Parameters};
use miobench::probes::{CnnProbe, ConvFrontEnd, FcnProbe, FrontTrace, ProbeArch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------- EER oracle

/// Brute-force sweep: every unique score and +inf as a threshold, each one
/// re-counted from scratch. Minimizes |FPR - FNR| with ties broken by lower
/// FPR, then lower threshold.
pub fn brute_force_eer(scores: &[(Label, f64)]) -> (f64, f64) {
    let mut thresholds: Vec<f64> = scores.iter().map(|s| s.1).collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let bona: Vec<f64> = scores.iter().filter(|s| s.0 == Label::Bonafide).map(|s| s.1).collect();
    let spoof: Vec<f64> = scores.iter().filter(|s| s.0 == Label::Spoof).map(|s| s.1).collect();
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &t in &thresholds {
        let fp = bona.iter().filter(|&&s| s >= t).count() as f64 / bona.len() as f64;
        let fn_ = spoof.iter().filter(|&&s| s < t).count() as f64 / spoof.len() as f64;
        let gap = (fp - fn_).abs();
        let better = match best {
            None => true,
            Some((g, f, _, _)) => gap < g || (gap == g && fp < f),
        };
        if better {
            best = Some((gap, fp, fn_, t));
        }
    }
    let (_, fp, fn_, t) = best.expect("non-empty sweep");
    ((fp + fn_) / 2.0, t)
}

pub fn score_set(labeled: &[(Label, f64)]) -> ScoreSet {
    ScoreSet::from_labeled(labeled).expect("valid scores")
}

// ----------------------------------------------------------- bilinear oracle

pub fn outer_nested(p: &[f64], q: &[f64]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; q.len()]; p.len()];
    for i in 0..p.len() {
        for j in 0..q.len() {
            m[i][j] = p[i] * q[j];
        }
    }
    m
}

// ---------------------------------------------------------------- PCA oracle

pub fn sample_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j] / n as f64;
        }
    }
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n as f64 - 1.0);
            }
        }
    }
    c
}

/// Top-`k` eigenpairs by power iteration with deflation.
pub fn power_iteration(cov: &[Vec<f64>], k: usize, iters: usize) -> Vec<(f64, Vec<f64>)> {
    let d = cov.len();
    let mut a: Vec<Vec<f64>> = cov.to_vec();
    let mut out = Vec::new();
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i * 7 + c * 3) % 5) as f64 / 10.0).collect();
        let mut lambda = 0.0;
        for _ in 0..iters {
            let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| a[i][j] * v[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v = w.iter().map(|x| x / norm).collect();
            lambda = norm;
        }
        for i in 0..d {
            for j in 0..d {
                a[i][j] -= lambda * v[i] * v[j];
            }
        }
        out.push((lambda, v));
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// -------------------------------------------------- finite-difference oracle

pub const FD_STEP: f64 = 1e-5;
/// Pre-activations or pooling gaps closer than this to a kink reject the draw.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Max relative error between analytic and central-difference parameter
/// gradients of the batch-mean loss.
pub fn param_grad_error<M: Classifier<f64>>(model: &M, input: &M::Input, labels: &[usize]) -> f64 {
    let analytic = model.backward(input, labels, false).expect("backward").grads;
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (ti, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let orig = probe.tensors()[ti][k];
            probe.tensors_mut()[ti][k] = orig + FD_STEP;
            let up = probe.mean_loss(input, labels).unwrap();
            probe.tensors_mut()[ti][k] = orig - FD_STEP;
            let down = probe.mean_loss(input, labels).unwrap();
            probe.tensors_mut()[ti][k] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

pub trait InputSlices {
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;
    fn slices(&self) -> Vec<&[f64]>;
}

impl InputSlices for Batch<f64> {
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.data_mut()]
    }
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.data()]
    }
}

impl InputSlices for PairBatch<f64> {
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.a.data_mut(), self.b.data_mut()]
    }
    fn slices(&self) -> Vec<&[f64]> {
        vec![self.a.data(), self.b.data()]
    }
}

pub fn input_grad_error<M>(model: &M, input: &M::Input, labels: &[usize]) -> f64
where
    M: Classifier<f64>,
    M::Input: InputSlices + Clone,
{
    let grad = model
        .backward(input, labels, true)
        .expect("backward")
        .input_grad
        .expect("input gradient");
    let grad: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
    let mut x = input.clone();
    let mut worst: f64 = 0.0;
    for (si, g) in grad.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let orig = x.slices()[si][k];
            x.slices_mut()[si][k] = orig + FD_STEP;
            let up = model.mean_loss(&x, labels).unwrap();
            x.slices_mut()[si][k] = orig - FD_STEP;
            let down = model.mean_loss(&x, labels).unwrap();
            x.slices_mut()[si][k] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn clear_of_zero(pre: &Batch<f64>) -> bool {
    pre.data().iter().all(|v| v.abs() > KINK_MARGIN)
}

/// Rejects draws where a pooling window's winner is ambiguous.
fn clear_pooling(front: &ConvFrontEnd<f64>, trace: &FrontTrace<f64>) -> bool {
    let len = front.in_dim();
    let pool = front.pool;
    let n = trace.conv_pre.size();
    for c in 0..front.conv.filters() {
        for w in 0..len / pool {
            for b in 0..n {
                let mut vals: Vec<f64> = (0..pool)
                    .map(|i| trace.conv_pre.get(c * len + w * pool + i, b).max(0.0))
                    .collect();
                vals.sort_by(|x, y| y.total_cmp(x));
                if vals[0] > 0.0 && vals[0] - vals[1] < KINK_MARGIN {
                    return false;
                }
            }
        }
    }
    clear_of_zero(&trace.conv_pre)
}

pub fn fcn_smooth(m: &FcnProbe<f64>, x: &Batch<f64>) -> bool {
    clear_of_zero(&m.trace(x).unwrap().hidden_pre)
}

pub fn cnn_smooth(m: &CnnProbe<f64>, x: &Batch<f64>) -> bool {
    let t = m.trace(x).unwrap();
    clear_pooling(&m.front, &t.front) && clear_of_zero(&t.hidden_pre)
}

pub fn mio_smooth(m: &MioModel<f64>, x: &PairBatch<f64>) -> bool {
    let t = m.trace(x).unwrap();
    clear_pooling(&m.branch_a.front, &t.a.front)
        && clear_pooling(&m.branch_b.front, &t.b.front)
        && clear_of_zero(&t.hidden_pre)
}

/// Perturbs every parameter by U(-0.3, 0.3) so biases are non-zero.
pub fn jitter<M: Parameters<f64>>(model: &mut M, rng: &mut ChaCha8Rng) {
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

pub fn gaussian_batch(features: usize, n: usize, rng: &mut ChaCha8Rng) -> Batch<f64> {
    Batch::from_raw(
        (0..features * n).map(|_| rng.sample(StandardNormal)).collect(),
        features,
        n,
    )
}

pub fn random_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..2)).collect()
}

pub const GRAD_BATCH: usize = 4;

pub fn small_probe_arch() -> ProbeArch {
    ProbeArch {
        hidden: 5,
        filters: 3,
        kernel: 3,
        pool: 2,
    }
}

pub fn small_mio_arch() -> MioArch {
    MioArch {
        filters: 2,
        kernel: 3,
        pool: 2,
        projection_dim: 3,
        head_hidden: 4,
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub draws: usize,
    pub rejected: usize,
    pub worst_param: f64,
    pub worst_input: f64,
}

/// Runs `draws` accepted smooth draws of one architecture.
fn grad_suite<M, F, S>(draws: usize, seed: u64, mut make: F, smooth: S) -> GradReport
where
    M: Classifier<f64>,
    M::Input: InputSlices + Clone,
    F: FnMut(u64, &mut ChaCha8Rng) -> (M, M::Input),
    S: Fn(&M, &M::Input) -> bool,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    let mut attempt = 0u64;
    while report.draws < draws {
        attempt += 1;
        assert!(attempt < 100 * draws as u64, "too many kink rejections");
        let (mut model, x) = make(attempt, &mut rng);
        jitter(&mut model, &mut rng);
        if !smooth(&model, &x) {
            report.rejected += 1;
            continue;
        }
        let labels = random_labels(GRAD_BATCH, &mut rng);
        report.worst_param = report.worst_param.max(param_grad_error(&model, &x, &labels));
        report.worst_input = report.worst_input.max(input_grad_error(&model, &x, &labels));
        report.draws += 1;
    }
    report
}

pub fn fcn_grad_suite(draws: usize, seed: u64) -> GradReport {
    grad_suite(
        draws,
        seed,
        |s, rng| {
            let m = FcnProbe::<f32>::init(6, &small_probe_arch(), s).unwrap().cast::<f64>();
            (m, gaussian_batch(6, GRAD_BATCH, rng))
        },
        fcn_smooth,
    )
}

pub fn cnn_grad_suite(draws: usize, seed: u64) -> GradReport {
    grad_suite(
        draws,
        seed,
        |s, rng| {
            let m = CnnProbe::<f32>::init(8, &small_probe_arch(), s).unwrap().cast::<f64>();
            (m, gaussian_batch(8, GRAD_BATCH, rng))
        },
        cnn_smooth,
    )
}

pub fn mio_grad_suite(draws: usize, seed: u64) -> GradReport {
    grad_suite(
        draws,
        seed,
        |s, rng| {
            let m = MioModel::<f32>::init(8, 6, &small_mio_arch(), s).unwrap().cast::<f64>();
            let x = PairBatch {
                a: gaussian_batch(8, GRAD_BATCH, rng),
                b: gaussian_batch(6, GRAD_BATCH, rng),
            };
            (m, x)
        },
        mio_smooth,
    )
}

// ------------------------------------------------------------ corpus files

pub fn write(dir: &Path, file: &str, corpus: &EmbeddingCorpus) -> PathBuf {
    let path = dir.join(file);
    save_corpus(corpus, &path).unwrap();
    path
}
