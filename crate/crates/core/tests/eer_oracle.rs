mod common;

use common::*;
use miobench::corpus::Label;
use miobench::metrics::{compute_eer, roc_points, ScoreSet};
use proptest::prelude::*;

/// Scores on a coarse grid so ties are common, or continuous in [0, 1].
fn labeled_scores() -> impl Strategy<Value = Vec<(Label, f64)>> {
    let score = prop_oneof![(0u32..=10).prop_map(|k| k as f64 / 10.0), 0.0f64..=1.0];
    (1usize..25, 1usize..25).prop_flat_map(move |(nb, ns)| {
        (
            proptest::collection::vec(score.clone(), nb),
            proptest::collection::vec(score.clone(), ns),
        )
            .prop_map(|(b, s)| {
                let mut v: Vec<(Label, f64)> = b.into_iter().map(|x| (Label::Bonafide, x)).collect();
                v.extend(s.into_iter().map(|x| (Label::Spoof, x)));
                v
            })
    })
}

fn flip(v: &[(Label, f64)]) -> Vec<(Label, f64)> {
    v.iter()
        .map(|&(l, s)| {
            let l = match l {
                Label::Bonafide => Label::Spoof,
                Label::Spoof => Label::Bonafide,
            };
            (l, s)
        })
        .collect()
}

/// Replaces each score by its rank among the distinct scores.
fn ranks(v: &[(Label, f64)]) -> Vec<(Label, f64)> {
    let mut distinct: Vec<f64> = v.iter().map(|x| x.1).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    v.iter()
        .map(|&(l, s)| (l, distinct.partition_point(|&d| d < s) as f64))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matches_brute_force_sweep(v in labeled_scores()) {
        let got = compute_eer(&score_set(&v)).unwrap();
        let (eer, t) = brute_force_eer(&v);
        prop_assert_eq!(got.eer, eer);
        prop_assert_eq!(got.threshold, t);
        prop_assert!((0.0..=1.0).contains(&got.eer));
    }

    #[test]
    fn label_flip_mirrors_the_curve(v in labeled_scores()) {
        let original = roc_points(&score_set(&v)).unwrap();
        let flipped = compute_eer(&score_set(&flip(&v))).unwrap();
        let min_gap = original.iter().map(|p| (p.fpr - p.fnr).abs()).fold(f64::INFINITY, f64::min);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        prop_assert!(close((flipped.fpr - flipped.fnr).abs(), min_gap));
        // Flipping maps each point (fpr, fnr) to (1 - fnr, 1 - fpr).
        let matches = original
            .iter()
            .filter(|p| close((p.fpr - p.fnr).abs(), min_gap))
            .any(|p| p.threshold == flipped.threshold && close(1.0 - p.fnr, flipped.fpr) && close(1.0 - p.fpr, flipped.fnr));
        prop_assert!(matches);
    }

    #[test]
    fn invariant_under_monotone_transforms(v in labeled_scores()) {
        let base = compute_eer(&score_set(&v)).unwrap();
        let ranked = compute_eer(&score_set(&ranks(&v))).unwrap();
        let scaled: Vec<(Label, f64)> = v.iter().map(|&(l, s)| (l, s * 4.0)).collect();
        let scaled = compute_eer(&score_set(&scaled)).unwrap();
        prop_assert_eq!(base.eer, ranked.eer);
        prop_assert_eq!(base.eer, scaled.eer);
        prop_assert_eq!((base.fpr, base.fnr), (scaled.fpr, scaled.fnr));
    }

    #[test]
    fn separated_classes_score_zero(nb in 1usize..20, ns in 1usize..20, gap in 0.01f64..0.5) {
        let mut v: Vec<(Label, f64)> = (0..nb).map(|i| (Label::Bonafide, 0.4 * i as f64 / nb as f64)).collect();
        v.extend((0..ns).map(|i| (Label::Spoof, 0.4 + gap + 0.1 * i as f64 / ns as f64)));
        prop_assert_eq!(compute_eer(&score_set(&v)).unwrap().eer, 0.0);
    }
}

#[test]
fn hand_case_is_one_third() {
    let v = [
        (Label::Bonafide, 0.1),
        (Label::Bonafide, 0.2),
        (Label::Bonafide, 0.6),
        (Label::Spoof, 0.4),
        (Label::Spoof, 0.7),
        (Label::Spoof, 0.8),
    ];
    let r = compute_eer(&score_set(&v)).unwrap();
    assert!((r.eer - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(brute_force_eer(&v).0, r.eer);
}

#[test]
fn all_equal_scores_give_one_half() {
    let v: Vec<(Label, f64)> = (0..6)
        .map(|i| (if i % 2 == 0 { Label::Bonafide } else { Label::Spoof }, 0.5))
        .collect();
    let r = compute_eer(&score_set(&v)).unwrap();
    assert_eq!(r.eer, 0.5);
}

#[test]
fn csv_round_trip_preserves_eer() {
    let v: Vec<(Label, f64)> = (0..40)
        .map(|i| {
            (
                if i % 3 == 0 { Label::Spoof } else { Label::Bonafide },
                (i as f64 * 0.37).sin().abs(),
            )
        })
        .collect();
    let s = score_set(&v);
    let back = ScoreSet::read_csv(s.to_csv_string().as_bytes()).unwrap();
    assert_eq!(back, s);
    assert_eq!(compute_eer(&back).unwrap(), compute_eer(&s).unwrap());
}
