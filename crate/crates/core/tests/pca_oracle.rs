mod common;

use common::*;
use miobench::corpus::{EmbeddingCorpus, EmbeddingRecord, Label, SplitTag};
use miobench::pca::{fit_pca, PcaError, PcaTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random orthonormal rows via Gram-Schmidt.
fn orthonormal(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &out {
            let c = dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= c * ui;
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Rows `mean + sum_i sqrt(var_i) z_i u_i`, plus isotropic noise.
fn planted(n: usize, d: usize, variances: &[f64], noise: f64, seed: u64) -> EmbeddingCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = orthonormal(variances.len(), d, &mut rng);
    let mean: Vec<f64> = (0..d).map(|j| j as f64 * 0.25 - 1.0).collect();
    let records = (0..n)
        .map(|i| {
            let mut x = mean.clone();
            for (u, &var) in basis.iter().zip(variances) {
                let z: f64 = rng.sample(StandardNormal);
                for (xj, uj) in x.iter_mut().zip(u) {
                    *xj += var.sqrt() * z * uj;
                }
            }
            for xj in x.iter_mut() {
                *xj += noise * rng.sample::<f64, _>(StandardNormal);
            }
            let label = if i % 2 == 0 { Label::Bonafide } else { Label::Spoof };
            EmbeddingRecord::new(format!("c{i:04}"), label, x.into_iter().map(|v| v as f32).collect())
        })
        .collect();
    EmbeddingCorpus::new("planted", "synthetic", d, SplitTag::Train, records).unwrap()
}

fn rows_f64(c: &EmbeddingCorpus) -> Vec<Vec<f64>> {
    c.records()
        .iter()
        .map(|r| r.vector.iter().map(|&v| v as f64).collect())
        .collect()
}

fn max_orthonormality_error(p: &PcaTransform) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..p.k() {
        for j in 0..p.k() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(p.component(i), p.component(j)) - target).abs());
        }
    }
    worst
}

#[test]
fn matches_power_iteration() {
    let c = planted(400, 12, &[9.0, 4.0, 1.0], 0.05, 3);
    let p = fit_pca(&c, 3).unwrap();
    let oracle = power_iteration(&sample_covariance(&rows_f64(&c)), 3, 5000);
    for (i, (lambda, v)) in oracle.iter().enumerate() {
        let got = p.explained_variance()[i];
        assert!(
            (got - lambda).abs() <= 1e-6 * lambda,
            "eigenvalue {i}: {got} vs {lambda}"
        );
        let align = dot(p.component(i), v).abs();
        assert!((align - 1.0).abs() <= 1e-6, "component {i} alignment {align}");
    }
    assert!(max_orthonormality_error(&p) <= 1e-5);
    assert!(p.explained_variance().windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn rank_two_data_reconstructs_exactly() {
    let c = planted(200, 10, &[5.0, 2.0], 0.0, 8);
    let p = fit_pca(&c, 2).unwrap();
    assert_eq!(p.rank(), 2);
    let mut worst: f64 = 0.0;
    for r in c.records() {
        let back = p.reconstruct(&p.project(&r.vector).unwrap()).unwrap();
        for (a, &b) in back.iter().zip(&r.vector) {
            worst = worst.max((a - b as f64).abs() / (1.0 + (b as f64).abs()));
        }
    }
    assert!(worst <= 1e-5, "reconstruction error {worst}");
}

#[test]
fn rank_deficiency_is_reported() {
    let c = planted(100, 8, &[3.0, 1.0], 0.0, 2);
    let p = fit_pca(&c, 4).unwrap();
    assert_eq!(p.rank(), 2);
    assert!(p.is_rank_deficient());
    assert_eq!(p.warnings().len(), 1);
    assert!(max_orthonormality_error(&p) <= 1e-5);
}

#[test]
#[allow(clippy::needless_range_loop)]
fn projection_of_training_data_is_centered_and_decorrelated() {
    let c = planted(300, 6, &[4.0, 2.0, 1.0], 0.1, 5);
    let p = fit_pca(&c, 3).unwrap();
    let out = p.apply(&c).unwrap();
    assert_eq!(out.dim(), 3);
    assert_eq!(out.ptm_id(), "synthetic+pca3");
    let rows = rows_f64(&out);
    let cov = sample_covariance(&rows);
    for i in 0..3 {
        assert!((cov[i][i] - p.explained_variance()[i]).abs() <= 1e-4 * cov[i][i]);
        for j in 0..3 {
            if i != j {
                assert!(cov[i][j].abs() <= 1e-4, "cov[{i}][{j}] = {}", cov[i][j]);
            }
        }
    }
}

#[test]
fn fit_is_deterministic_and_train_only() {
    let train = planted(120, 9, &[3.0, 2.0, 1.0], 0.1, 11);
    let other = planted(120, 9, &[1.0, 1.0, 1.0], 1.0, 12);
    let a = fit_pca(&train, 3).unwrap();
    let b = fit_pca(&train, 3).unwrap();
    assert_eq!(a.encode(), b.encode());
    let before = a.encode();
    let _ = a.apply(&other).unwrap();
    assert_eq!(a.encode(), before);
    assert_ne!(fit_pca(&other, 3).unwrap().encode(), before);
}

#[test]
fn block_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let c = planted(50, 7, &[2.0, 1.0], 0.2, 1);
    let p = fit_pca(&c, 2).unwrap();
    let path = dir.path().join("p.miop");
    p.save(&path).unwrap();
    let back = PcaTransform::load(&path).unwrap();
    assert_eq!(back, p);
    let bytes = std::fs::read(&path).unwrap();
    assert!(matches!(
        PcaTransform::decode(&bytes[..bytes.len() - 3]),
        Err(PcaError::Truncated { .. })
    ));
}

#[test]
fn k_bounds() {
    let c = planted(5, 8, &[1.0], 0.5, 1);
    assert!(matches!(fit_pca(&c, 9), Err(PcaError::KTooLarge { .. })));
    assert!(matches!(fit_pca(&c, 5), Err(PcaError::KTooLarge { .. })));
    assert!(fit_pca(&c, 4).is_ok());
}
