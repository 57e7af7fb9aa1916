//! Gaussian test corpora for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CorpusError, EmbeddingCorpus, EmbeddingRecord, Label, SplitTag};

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, shift: Option<(&[f64], f64)>) -> Vec<f32> {
    (0..dim)
        .map(|j| {
            let x: f64 = rng.sample(StandardNormal);
            let offset = shift.map_or(0.0, |(dir, sep)| dir[j] * sep);
            (x + offset) as f32
        })
        .collect()
}

fn check_params(dim: usize, n_per_class: usize, separation: f64) -> Result<(), CorpusError> {
    if dim == 0 {
        return Err(CorpusError::InvalidParameter("dim must be at least 1".into()));
    }
    if n_per_class == 0 {
        return Err(CorpusError::InvalidParameter("n_per_class must be positive".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(CorpusError::InvalidParameter(format!(
            "separation must be a non-negative real, got {separation}"
        )));
    }
    Ok(())
}

fn clip_id(label: Label, i: usize) -> String {
    match label {
        Label::Bonafide => format!("bona-{i:06}"),
        Label::Spoof => format!("spoof-{i:06}"),
    }
}

/// Bonafide ~ N(0, I); spoof ~ N(separation * u, I) for a seeded random unit `u`.
///
/// Records are ordered bonafide 0..n then spoof 0..n.
pub fn synthesize_corpus(
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<EmbeddingCorpus, CorpusError> {
    check_params(dim, n_per_class, separation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let direction = unit_direction(&mut rng, dim);
    let mut records = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        records.push(EmbeddingRecord::new(
            clip_id(Label::Bonafide, i),
            Label::Bonafide,
            gaussian(&mut rng, dim, None),
        ));
    }
    for i in 0..n_per_class {
        records.push(EmbeddingRecord::new(
            clip_id(Label::Spoof, i),
            Label::Spoof,
            gaussian(&mut rng, dim, Some((&direction, separation))),
        ));
    }
    EmbeddingCorpus::new(
        format!("synth-d{dim}-n{n_per_class}-s{separation}-seed{seed}"),
        "synthetic",
        dim,
        SplitTag::Unsplit,
        records,
    )
}

/// Two corpora over the same clip_ids where each view exposes half of the
/// spoofs: in `a` only odd-indexed spoof clips are shifted, in `b` only
/// even-indexed ones. Bonafide clips are never shifted. Either view alone
/// misses half the spoofs; the pair together identifies all of them.
pub fn synthesize_complementary_pair(
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<(EmbeddingCorpus, EmbeddingCorpus), CorpusError> {
    check_params(dim, n_per_class, separation)?;
    let build = |ptm: &str, seed: u64, shifted_parity: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let direction = unit_direction(&mut rng, dim);
        let mut records = Vec::with_capacity(2 * n_per_class);
        for i in 0..n_per_class {
            records.push(EmbeddingRecord::new(
                clip_id(Label::Bonafide, i),
                Label::Bonafide,
                gaussian(&mut rng, dim, None),
            ));
        }
        for i in 0..n_per_class {
            let shift = (i % 2 == shifted_parity).then_some((direction.as_slice(), separation));
            records.push(EmbeddingRecord::new(
                clip_id(Label::Spoof, i),
                Label::Spoof,
                gaussian(&mut rng, dim, shift),
            ));
        }
        EmbeddingCorpus::new(
            format!("complementary-{ptm}-seed{seed}"),
            ptm,
            dim,
            SplitTag::Unsplit,
            records,
        )
    };
    let a = build("synthetic-a", seed, 1)?;
    let b = build("synthetic-b", seed.wrapping_add(0x9E37_79B9_7F4A_7C15), 0)?;
    Ok((a, b))
}
