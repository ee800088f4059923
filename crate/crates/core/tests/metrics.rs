mod common;

use common::rng;
use lerp_core::metrics::{precision_recall, report, roc_auc, PredictionSet};
use lerp_core::LerpError;
use lerp_oracle as oracle;
use proptest::prelude::*;
use rand::Rng;

fn random_set(r: &mut impl Rng, records: usize, labels: usize, levels: u8) -> PredictionSet {
    let scores = (0..records)
        .map(|_| {
            (0..labels)
                .map(|_| f64::from(r.random_range(0..=levels)) / f64::from(levels))
                .collect()
        })
        .collect();
    let targets = (0..records)
        .map(|_| (0..labels).map(|_| r.random_range(0..2)).collect())
        .collect();
    PredictionSet::new(scores, targets).unwrap()
}

fn column(p: &PredictionSet, j: usize) -> (Vec<f64>, Vec<u8>) {
    (
        p.scores.iter().map(|r| r[j]).collect(),
        p.targets.iter().map(|r| r[j]).collect(),
    )
}

#[test]
fn randomized_instances_match_counting_and_pairwise_oracles() {
    for seed in 0..25 {
        let mut r = rng(seed);
        let records = r.random_range(1..30);
        let labels = r.random_range(1..6);
        let pred = random_set(&mut r, records, labels, 10);
        let rep = report(&pred).unwrap();

        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let (mut p_sum, mut r_sum) = (0.0, 0.0);
        let mut aucs = Vec::new();
        for j in 0..labels {
            let (s, t) = column(&pred, j);
            let (a, b, c) = oracle::counts(&s, &t, 0.5);
            let (p, rc) = oracle::precision_recall(a, b, c);
            assert_eq!(rep.per_label[j].precision, p);
            assert_eq!(rep.per_label[j].recall, rc);
            assert_eq!(rep.per_label[j].roc_auc, oracle::pairwise_auc(&s, &t));
            tp += a;
            fp += b;
            fn_ += c;
            p_sum += p;
            r_sum += rc;
            aucs.extend(oracle::pairwise_auc(&s, &t));
        }
        let (mp, mr) = oracle::precision_recall(tp, fp, fn_);
        assert_eq!(rep.micro_precision, mp);
        assert_eq!(rep.micro_recall, mr);
        assert_eq!(rep.macro_precision, p_sum / labels as f64);
        assert_eq!(rep.macro_recall, r_sum / labels as f64);
        let all: Vec<f64> = pred.scores.concat();
        let all_t: Vec<u8> = pred.targets.concat();
        assert_eq!(rep.micro_roc_auc, oracle::pairwise_auc(&all, &all_t));
        let macro_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
        assert_eq!(rep.macro_roc_auc, macro_auc);
    }
}

#[test]
fn fixed_fifty_by_five_instance() {
    let mut r = rng(5050);
    let pred = random_set(&mut r, 50, 5, 100);
    let rep = report(&pred).unwrap();
    let all: Vec<f64> = pred.scores.concat();
    let all_t: Vec<u8> = pred.targets.concat();
    let (tp, fp, fn_) = oracle::counts(&all, &all_t, 0.5);
    let (p, rc) = oracle::precision_recall(tp, fp, fn_);
    assert_eq!(rep.micro_precision, p);
    assert_eq!(rep.micro_recall, rc);
    assert_eq!(rep.micro_roc_auc, oracle::pairwise_auc(&all, &all_t));
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0.9, 0.1], &[1, 0]), Some(1.0));
    assert_eq!(roc_auc(&[0.3; 6], &[1, 0, 1, 0, 1, 0]), Some(0.5));
    assert_eq!(roc_auc(&[0.3, 0.2], &[1, 1]), None);
    assert_eq!(roc_auc(&[], &[]), None);
}

#[test]
fn perfect_identity_and_inverted_predictions() {
    let targets = vec![vec![1, 0, 1], vec![0, 1, 0], vec![1, 1, 0], vec![0, 0, 1]];
    let as_scores = |f: fn(u8) -> f64| -> Vec<Vec<f64>> {
        targets
            .iter()
            .map(|r| r.iter().map(|&t| f(t)).collect())
            .collect()
    };
    let rep = report(&PredictionSet::new(as_scores(f64::from), targets.clone()).unwrap()).unwrap();
    for v in [
        rep.micro_precision,
        rep.macro_precision,
        rep.micro_recall,
        rep.macro_recall,
    ] {
        assert_eq!(v, 1.0);
    }
    assert_eq!(rep.micro_roc_auc, Some(1.0));
    assert_eq!(rep.macro_roc_auc, Some(1.0));

    let inverted =
        report(&PredictionSet::new(as_scores(|t| 1.0 - f64::from(t)), targets.clone()).unwrap())
            .unwrap();
    assert_eq!(inverted.micro_roc_auc, Some(0.0));

    let negative = PredictionSet::new(as_scores(|_| 0.1), targets).unwrap();
    let pr = precision_recall(&negative).unwrap();
    assert_eq!(pr.micro_recall, 0.0);
    assert_eq!(pr.macro_recall, 0.0);
    assert_eq!(pr.micro_precision, 0.0);
}

#[test]
fn invalid_prediction_sets_are_rejected() {
    assert!(matches!(
        PredictionSet::new(vec![], vec![]),
        Err(LerpError::Data(_))
    ));
    assert!(PredictionSet::new(vec![vec![0.5]], vec![vec![1, 0]]).is_err());
    assert!(PredictionSet::new(vec![vec![1.5]], vec![vec![1]]).is_err());
    assert!(PredictionSet::new(vec![vec![0.5]], vec![vec![2]]).is_err());
    let ok = PredictionSet::new(vec![vec![0.5]], vec![vec![1]]).unwrap();
    assert!(ok.clone().with_threshold(0.0).is_err());
    assert!(ok.with_threshold(1.0).is_err());
}

#[test]
fn json_has_the_six_headline_keys() {
    let mut r = rng(1);
    let rep = report(&random_set(&mut r, 10, 3, 10)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
    for key in [
        "micro_precision",
        "macro_precision",
        "micro_recall",
        "macro_recall",
        "micro_roc_auc",
        "macro_roc_auc",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }
}

fn scores_and_targets() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..12).prop_map(|v| f64::from(v) / 11.0), n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

/// The complement AUC divides `d - x` by the same `d = 2PN`, so the identity
/// reduces to `x/d + (d-x)/d == 1` in f64. Checked for every `x` and every
/// even `d` up to 3000.
#[test]
fn complement_division_is_exact_for_small_denominators() {
    for d in (2..=3000u64).step_by(2) {
        for x in 0..=d {
            assert_eq!(x as f64 / d as f64 + (d - x) as f64 / d as f64, 1.0, "x={x} d={d}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_is_invariant_under_monotone_transforms((s, t) in scores_and_targets()) {
        let base = roc_auc(&s, &t);
        let cubed: Vec<f64> = s.iter().map(|v| (3.0 * v - 1.0).powi(3)).collect();
        let logit: Vec<f64> = s.iter().map(|v| 7.0 * v + 2.0).collect();
        prop_assert_eq!(roc_auc(&cubed, &t), base);
        prop_assert_eq!(roc_auc(&logit, &t), base);
    }

    #[test]
    fn auc_complement_identity_is_exact((s, t) in scores_and_targets()) {
        let flipped: Vec<u8> = t.iter().map(|&v| 1 - v).collect();
        match (roc_auc(&s, &t), roc_auc(&s, &flipped)) {
            (Some(a), Some(b)) => prop_assert_eq!(a + b, 1.0),
            (None, None) => {}
            other => prop_assert!(false, "definedness differs: {:?}", other),
        }
    }

    #[test]
    fn macro_metrics_ignore_label_order(seed in any::<u64>(), labels in 2usize..6) {
        let mut r = rng(seed);
        let pred = random_set(&mut r, 20, labels, 10);
        let rev = PredictionSet::new(
            pred.scores.iter().map(|row| row.iter().rev().copied().collect()).collect(),
            pred.targets.iter().map(|row| row.iter().rev().copied().collect()).collect(),
        ).unwrap();
        let (a, b) = (report(&pred).unwrap(), report(&rev).unwrap());
        prop_assert!((a.macro_precision - b.macro_precision).abs() < 1e-12);
        prop_assert!((a.macro_recall - b.macro_recall).abs() < 1e-12);
        match (a.macro_roc_auc, b.macro_roc_auc) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn micro_precision_equals_recall_when_counts_balance(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred = random_set(&mut r, 15, 4, 10);
        let all: Vec<f64> = pred.scores.concat();
        let all_t: Vec<u8> = pred.targets.concat();
        let (tp, fp, fn_) = oracle::counts(&all, &all_t, 0.5);
        let rep = report(&pred).unwrap();
        if tp + fp == tp + fn_ {
            prop_assert_eq!(rep.micro_precision, rep.micro_recall);
        }
        for v in [rep.micro_precision, rep.macro_precision, rep.micro_recall, rep.macro_recall] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
