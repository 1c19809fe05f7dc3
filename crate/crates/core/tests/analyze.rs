use dyntmf::analyze::{
    concept_centroid, concept_score, export_series, project_trajectory, read_series, word_relevance, ConceptLexicon,
    RelevanceSeries,
};
use dyntmf::cluster::stack;
use dyntmf::corpus::{BackgroundModel, CorpusStore, FilterConfig};
use dyntmf::factorize::{train, EmbeddingSet, Factor, ModelConfig, Variant};
use dyntmf::forecast::{community_centroids, interactions_from_buckets, Forecaster, LinearAr};
use dyntmf::pipeline::{prepare, synthetic_windows};
use dyntmf::syndata::{generate, DriftEvent, SynthConfig};
use dyntmf::Matrix;
use proptest::prelude::*;

fn words_model(ws: Vec<Matrix>) -> EmbeddingSet {
    let k = ws[0].cols();
    EmbeddingSet {
        variant: Variant::Cerberus,
        k,
        timesteps: ws.len(),
        user: Factor::Dynamic(vec![Matrix::zeros(1, k); ws.len()]),
        context: Some(Factor::Dynamic(vec![Matrix::zeros(1, k); ws.len()])),
        word: Factor::Dynamic(ws),
        adjacency_bias: None,
        content_bias: None,
    }
}

fn vocab(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

#[test]
fn zero_and_orthogonal_words() {
    let ws = vec![
        Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap(),
    ];
    let model = words_model(ws);
    let z = word_relevance("w0", &vocab(2), &[1.0, 0.0], 0, 1, &model).unwrap();
    assert_eq!(z.values, vec![0.0, 0.0]);
    let o = word_relevance("w1", &vocab(2), &[1.0, 0.0], 0, 1, &model).unwrap();
    assert_eq!(o.values, vec![0.0, 1.0]);
    assert!(word_relevance("w9", &vocab(2), &[1.0, 0.0], 0, 1, &model).is_err());
}

#[test]
fn singleton_lexicon_centroid_is_the_word() {
    let w = Matrix::from_rows(&[vec![0.3, -1.7, 2.0], vec![5.0, 5.0, 5.0]]).unwrap();
    let model = words_model(vec![w.clone()]);
    let lex = ConceptLexicon::new("one", &["w0"]);
    assert_eq!(concept_centroid(&lex, &vocab(2), &model, 0).unwrap(), w.row(0));
    assert!(concept_centroid(&ConceptLexicon::new("none", &["zz"]), &vocab(2), &model, 0).is_err());
}

#[test]
fn series_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    export_series(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "subject,cluster_id,cluster_size,t,value\n");
    let series = vec![
        RelevanceSeries {
            subject: "kavanaugh".into(),
            cluster_id: 2,
            cluster_size: 40,
            values: vec![0.1, -1.0 / 3.0, 2.5e-17],
        },
        RelevanceSeries {
            subject: "violence".into(),
            cluster_id: 0,
            cluster_size: 7,
            values: vec![1e6, 0.0, std::f64::consts::PI],
        },
    ];
    export_series(&series, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 7);
    let back = read_series(&path).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in series.iter().zip(&back) {
        assert_eq!((&a.subject, a.cluster_id, a.cluster_size), (&b.subject, b.cluster_id, b.cluster_size));
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn identical_embeddings_project_to_one_point() {
    let x = Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 5]).unwrap();
    let names = vec!["c".to_string()];
    let centroids = dyntmf::forecast::CommunityCentroids {
        names,
        centroids: x.clone(),
    };
    let tr = project_trajectory(
        &x,
        "u",
        &vec![vec![1.0, 2.0, 3.0]; 3],
        &Forecaster::LinearAr(LinearAr::identity(3)),
        &centroids,
    )
    .unwrap();
    assert!(tr.points.iter().all(|p| *p == tr.points[0]));
    assert_eq!(tr.predicted, tr.points[0]);
}

/// Members of c0 who migrate into c1 halfway through end up nearer c1.
#[test]
fn migrating_user_ends_near_destination() {
    let cfg = SynthConfig {
        drift_events: vec![DriftEvent::UserMigration {
            at: 3,
            from: 0,
            to: 1,
            users: 10,
        }],
        background_tokens: 50_000,
        seed: 2,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let bg = BackgroundModel::from_tokens(out.background.iter()).unwrap();
    let prep = prepare(
        &CorpusStore::new(out.posts.clone()),
        &synthetic_windows(&cfg).unwrap(),
        &FilterConfig::default(),
        None,
        &bg,
    )
    .unwrap();
    let mcfg = ModelConfig {
        k: 8,
        epochs: 300,
        seed: 2,
        ..ModelConfig::default()
    };
    let (model, _) = train(&prep.bundle, &mcfg).unwrap();
    let roster = &prep.bundle.manifests.roster;
    let st = stack(&model, roster, &prep.bundle.activity()).unwrap();
    let interactions = interactions_from_buckets(&prep.buckets, roster);
    let names: Vec<String> = ["c0", "c1", "c2"].iter().map(|s| s.to_string()).collect();
    let centroids = community_centroids(&model, &names, &interactions).unwrap();
    let fc = Forecaster::LinearAr(LinearAr::identity(8));
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    for moved in &out.truth.drift_log[0].users {
        let i = roster.iter().position(|u| u == moved).unwrap();
        let tr = project_trajectory(&st.x, moved, &model.user_history(i), &fc, &centroids).unwrap();
        let end = *tr.points.last().unwrap();
        assert!(d(end, tr.centroids[1]) < d(end, tr.centroids[0]), "{moved}");
    }
}

proptest! {
    #[test]
    fn relevance_is_bilinear(
        w in prop::collection::vec(-3.0f64..3.0, 6),
        c1 in prop::collection::vec(-3.0f64..3.0, 3),
        c2 in prop::collection::vec(-3.0f64..3.0, 3),
        alpha in -4.0f64..4.0,
    ) {
        let ws = vec![Matrix::from_vec(2, 3, w.clone()).unwrap()];
        let scaled = vec![Matrix::from_vec(2, 3, w.iter().map(|v| v * alpha).collect()).unwrap()];
        let v = vocab(2);
        let r = |m: &EmbeddingSet, c: &[f64]| word_relevance("w1", &v, c, 0, 1, m).unwrap().values[0];
        let (m, ms) = (words_model(ws), words_model(scaled));
        prop_assert!((r(&ms, &c1) - alpha * r(&m, &c1)).abs() < 1e-9);
        let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        prop_assert!((r(&m, &sum) - r(&m, &c1) - r(&m, &c2)).abs() < 1e-9);
        let lex = ConceptLexicon::new("l", &["w0", "w1"]);
        let base = concept_score(&c1, 0, 1, &lex, &v, &m, false).unwrap().values[0];
        let c3: Vec<f64> = c1.iter().map(|x| x * alpha.abs()).collect();
        let grown = concept_score(&c3, 0, 1, &lex, &v, &m, false).unwrap().values[0];
        prop_assert!((grown - alpha.abs() * base).abs() < 1e-9);
    }
}
