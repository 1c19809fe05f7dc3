use std::collections::BTreeSet;

use dyntmf::factorize::{EmbeddingSet, Factor, Variant};
use dyntmf::forecast::{
    community_centroids, concordance, concordance_index, eval_embedding_prediction, make_sequences, mse,
    predict_affinity, train_forecaster, ConcordanceMode, Forecaster, ForecasterConfig, ForecasterKind, Interaction,
    LinearAr, SplitConfig,
};
use dyntmf::syndata::affine_trajectories;
use dyntmf::Matrix;
use proptest::prelude::*;

/// Every pair enumerated explicitly.
fn ci_oracle(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let (mut score, mut pairs) = (0.0, 0usize);
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            if truth[i] == truth[j] {
                continue;
            }
            pairs += 1;
            let (lo, hi) = if truth[i] < truth[j] { (i, j) } else { (j, i) };
            if pred[lo] < pred[hi] {
                score += 1.0;
            } else if pred[lo] == pred[hi] {
                score += 0.5;
            }
        }
    }
    (pairs > 0).then(|| score / pairs as f64)
}

fn linear_cfg() -> ForecasterConfig {
    ForecasterConfig {
        kind: ForecasterKind::LinearAr,
        ..ForecasterConfig::default()
    }
}

fn model_from(rows_per_t: Vec<Vec<Vec<f64>>>) -> EmbeddingSet {
    let k = rows_per_t[0][0].len();
    EmbeddingSet {
        variant: Variant::NoAdj,
        k,
        timesteps: rows_per_t.len(),
        user: Factor::Dynamic(rows_per_t.iter().map(|r| Matrix::from_rows(r).unwrap()).collect()),
        context: None,
        word: Factor::Static(Matrix::zeros(1, k)),
        adjacency_bias: None,
        content_bias: None,
    }
}

#[test]
fn ci_matches_pair_enumeration() {
    let mut state = 1u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 59) as f64
    };
    for n in 0..=500 {
        if n > 60 && n % 37 != 0 {
            continue;
        }
        let pred: Vec<f64> = (0..n).map(|_| next()).collect();
        let truth: Vec<f64> = (0..n).map(|_| next()).collect();
        assert_eq!(concordance_index(&pred, &truth).unwrap(), ci_oracle(&pred, &truth), "n = {n}");
    }
}

#[test]
fn ci_example_from_three_items() {
    assert_eq!(concordance_index(&[0.2, 0.1, 0.8], &[0.1, 0.5, 0.9]).unwrap(), Some(2.0 / 3.0));
}

#[test]
fn ci_without_pairs_is_an_error_at_report_level() {
    assert!(concordance(&[vec![0.3, 0.4]], &[vec![1.0, 1.0]], ConcordanceMode::WithinSample).is_err());
}

#[test]
fn splits_are_user_disjoint_and_seeded() {
    let (model, roster) = affine_trajectories(40, 5, 3, 0.1, 1).unwrap();
    let a = make_sequences(&model, &roster, SplitConfig::default(), 9).unwrap();
    let b = make_sequences(&model, &roster, SplitConfig::default(), 9).unwrap();
    assert_eq!(a, b);
    let users = |s: &[dyntmf::forecast::SequenceSample]| s.iter().map(|x| x.user_id.clone()).collect::<BTreeSet<_>>();
    let (tr, te, va) = (users(&a.train), users(&a.test), users(&a.validation));
    assert_eq!((tr.len(), te.len(), va.len()), (30, 6, 4));
    assert!(tr.is_disjoint(&te) && tr.is_disjoint(&va) && te.is_disjoint(&va));
    assert!(a.train.iter().all(|s| s.history.len() == s.t && (1..5).contains(&s.t)));
    let c = make_sequences(&model, &roster, SplitConfig::default(), 10).unwrap();
    assert_ne!(users(&c.train), tr);
}

#[test]
fn constant_sequences_are_learned_exactly() {
    let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.1 - 1.0, (i % 7) as f64, 0.5]).collect();
    let model = model_from(vec![rows; 5]);
    let roster: Vec<String> = (0..30).map(|i| format!("u{i}")).collect();
    let s = make_sequences(&model, &roster, SplitConfig::default(), 2).unwrap();
    let f = train_forecaster(&s.train, &s.validation, &linear_cfg()).unwrap();
    assert!(mse(&f, &s.test).unwrap() < 1e-6);
}

#[test]
fn affine_trajectories_are_forecast_closely() {
    let (model, roster) = affine_trajectories(60, 6, 8, 0.05, 7).unwrap();
    let s = make_sequences(&model, &roster, SplitConfig::default(), 1).unwrap();
    let f = train_forecaster(&s.train, &s.validation, &linear_cfg()).unwrap();
    assert!(eval_embedding_prediction(&f, &s.test).unwrap().mean >= 0.99);
    // With a shared drift the order-1 model is exact.
    let (model, roster) = affine_trajectories(30, 6, 4, 0.0, 7).unwrap();
    let s = make_sequences(&model, &roster, SplitConfig::default(), 1).unwrap();
    let f = train_forecaster(&s.train, &s.validation, &linear_cfg()).unwrap();
    assert!(mse(&f, &s.test).unwrap() < 1e-20);
}

#[test]
fn perfect_and_antipodal_forecasts() {
    let (model, roster) = affine_trajectories(20, 3, 4, 0.0, 2).unwrap();
    let s = make_sequences(&model, &roster, SplitConfig::default(), 1).unwrap();
    let mut test = s.test.clone();
    for x in &mut test {
        x.target = x.history.last().unwrap().clone();
    }
    let identity = Forecaster::LinearAr(LinearAr::identity(4));
    assert!((eval_embedding_prediction(&identity, &test).unwrap().mean - 1.0).abs() < 1e-12);
    let mut flip = LinearAr::identity(4);
    for i in 0..4 {
        flip.a.set(i, i, -1.0);
    }
    let report = eval_embedding_prediction(&Forecaster::LinearAr(flip), &test).unwrap();
    assert!((report.mean + 1.0).abs() < 1e-12);
}

#[test]
fn centroids_are_interaction_means() {
    let model = model_from(vec![vec![vec![1.0, 0.0], vec![0.0, 3.0]], vec![vec![5.0, 5.0], vec![2.0, 2.0]]]);
    let names = vec!["x".to_string(), "y".to_string()];
    let it = |user, t, c: &str| Interaction {
        user,
        t,
        community: c.into(),
    };
    let c = community_centroids(&model, &names, &[it(0, 0, "x"), it(1, 0, "x"), it(1, 1, "y")]).unwrap();
    assert_eq!(c.centroids.row(0), &[0.5, 1.5]);
    assert_eq!(c.centroids.row(1), &[2.0, 2.0]);
    let err = community_centroids(&model, &names, &[it(0, 0, "x")]).unwrap_err();
    assert!(err.to_string().contains("'y'"));
}

proptest! {
    #[test]
    fn ci_is_invariant_to_monotone_maps(
        pairs in prop::collection::vec((-50i32..50, -5i32..5), 2..60),
        shift in -3.0f64..3.0,
        scale in 0.1f64..10.0,
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let base = concordance_index(&pred, &truth).unwrap();
        let mapped: Vec<f64> = pred.iter().map(|v| (v * scale + shift).powi(3)).collect();
        prop_assert_eq!(concordance_index(&mapped, &truth).unwrap(), base);
        prop_assert_eq!(base, ci_oracle(&pred, &truth));
        if let Some(ci) = base {
            prop_assert!((0.0..=1.0).contains(&ci));
        }
    }

    #[test]
    fn ci_of_truth_against_itself(truth in prop::collection::vec(-100i32..100, 2..80)) {
        let t: Vec<f64> = truth.iter().map(|v| *v as f64).collect();
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        if let Some(ci) = concordance_index(&t, &t).unwrap() {
            prop_assert_eq!(ci, 1.0);
            prop_assert_eq!(concordance_index(&neg, &t).unwrap(), Some(0.0));
        }
    }

    #[test]
    fn affinity_is_scale_invariant(rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..6), c in 0.01f64..100.0) {
        let centroids = dyntmf::forecast::CommunityCentroids {
            names: (0..rows.len()).map(|i| format!("c{i}")).collect(),
            centroids: Matrix::from_rows(&rows).unwrap(),
        };
        let f = Forecaster::LinearAr(LinearAr::identity(3));
        let h = vec![vec![0.3, -0.2, 0.9]];
        let scaled = vec![h[0].iter().map(|v| v * c).collect::<Vec<f64>>()];
        let a = predict_affinity(&f, "u", &h, &centroids).unwrap();
        let b = predict_affinity(&f, "u", &scaled, &centroids).unwrap();
        for (x, y) in a.y_hat.iter().zip(&b.y_hat) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        if !a.degenerate {
            prop_assert_eq!(a.y_hat.iter().cloned().fold(f64::MIN, f64::max), 1.0);
        }
    }
}
