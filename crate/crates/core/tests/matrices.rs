use std::collections::BTreeSet;

use dyntmf::corpus::{BackgroundModel, CorpusStore, FilterConfig, Post};
use dyntmf::matrices::{build_adjacency, build_content, SparseMatrix};
use dyntmf::pipeline::{prepare, synthetic_windows};
use dyntmf::syndata::{generate, SynthConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 7] = ["a", "b", "c", "d", "e", "f", "zz"];

fn random_bucket(seed: u64, users: usize, threads: usize, posts: usize) -> Vec<Post> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..posts)
        .map(|_| {
            let n_tok = rng.random_range(0..6);
            Post {
                user_id: format!("u{}", rng.random_range(0..users)),
                thread_id: format!("t{}", rng.random_range(0..threads)),
                timestamp: 0,
                community: "c".into(),
                category: "k".into(),
                tokens: (0..n_tok)
                    .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
                    .collect(),
            }
        })
        .collect()
}

fn users(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("u{i}")).collect()
}

fn posted_in(bucket: &[Post], user: &str, thread: &str) -> bool {
    bucket.iter().any(|p| p.user_id == user && p.thread_id == thread)
}

/// Pairwise enumeration of shared threads, no indexing structures.
fn adjacency_oracle(bucket: &[Post], roster: &[String], context: &[String]) -> Vec<Option<Vec<f64>>> {
    let threads: BTreeSet<&str> = bucket.iter().map(|p| p.thread_id.as_str()).collect();
    roster
        .iter()
        .map(|i| {
            let shared: Vec<f64> = context
                .iter()
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    threads
                        .iter()
                        .filter(|th| posted_in(bucket, i, th) && posted_in(bucket, j, th))
                        .count() as f64
                })
                .collect();
            let total: f64 = shared.iter().sum();
            (total > 0.0).then(|| shared.iter().map(|v| v / total).collect())
        })
        .collect()
}

fn content_oracle(bucket: &[Post], roster: &[String], vocab: &[String], bg: &BackgroundModel) -> Vec<Option<Vec<f64>>> {
    roster
        .iter()
        .map(|i| {
            let tokens: Vec<&String> = bucket
                .iter()
                .filter(|p| &p.user_id == i)
                .flat_map(|p| &p.tokens)
                .collect();
            if tokens.is_empty() {
                return None;
            }
            Some(
                vocab
                    .iter()
                    .map(|z| {
                        let c = tokens.iter().filter(|t| *t == &z).count() as f64;
                        if c == 0.0 {
                            return 0.0;
                        }
                        let pmi = ((c / tokens.len() as f64) / bg.probability(z)).ln();
                        pmi.max(0.0)
                    })
                    .collect(),
            )
        })
        .collect()
}

fn assert_matches(m: &SparseMatrix, oracle: &[Option<Vec<f64>>]) {
    assert_eq!(m.rows(), oracle.len());
    for (i, row) in oracle.iter().enumerate() {
        assert_eq!(m.is_row_active(i), row.is_some(), "activity of row {i}");
        let want = row.clone().unwrap_or_else(|| vec![0.0; m.cols()]);
        for (j, w) in want.iter().enumerate() {
            assert!((m.get(i, j) - w).abs() <= 1e-9, "({i}, {j}): {} vs {w}", m.get(i, j));
        }
    }
}

fn background() -> BackgroundModel {
    BackgroundModel::from_tokens("a a a b b c d d d d e x y y".split(' ')).unwrap()
}

#[test]
fn adjacency_matches_pairwise_oracle() {
    for seed in 0..25 {
        let bucket = random_bucket(seed, 10, 6, 25);
        let roster = users(10);
        // Context users overlap the roster partially so self-exclusion is exercised.
        let context: Vec<String> = ["u1", "u3", "u4", "u7", "u8", "u11"].iter().map(|s| s.to_string()).collect();
        let a = build_adjacency(&bucket, &roster, &context);
        assert_matches(&a, &adjacency_oracle(&bucket, &roster, &context));
    }
}

#[test]
fn content_matches_counting_oracle() {
    let bg = background();
    let vocab: Vec<String> = ["a", "b", "c", "f", "zz"].iter().map(|s| s.to_string()).collect();
    for seed in 0..25 {
        let bucket = random_bucket(100 + seed, 8, 5, 30);
        let roster = users(9);
        let c = build_content(&bucket, &roster, &vocab, &bg);
        assert_matches(&c, &content_oracle(&bucket, &roster, &vocab, &bg));
        assert!(c.entries().all(|(_, _, v)| v > 0.0 && v.is_finite()));
    }
}

#[test]
fn active_adjacency_rows_sum_to_one() {
    for seed in 0..10 {
        let bucket = random_bucket(200 + seed, 15, 8, 60);
        let roster = users(15);
        let a = build_adjacency(&bucket, &roster, &roster);
        for i in 0..a.rows() {
            if a.is_row_active(i) {
                assert!((a.row_sum(i) - 1.0).abs() < 1e-9);
            } else {
                assert_eq!(a.row_nnz(i), 0);
            }
        }
    }
}

#[test]
fn rebuild_is_bit_identical() {
    let bucket = random_bucket(9, 12, 6, 50);
    let roster = users(12);
    let vocab: Vec<String> = WORDS.iter().map(|s| s.to_string()).collect();
    let a = build_adjacency(&bucket, &roster, &roster);
    let c = build_content(&bucket, &roster, &vocab, &background());
    let mut bytes = (Vec::new(), Vec::new());
    a.write_to(&mut bytes.0).unwrap();
    build_adjacency(&bucket, &roster, &roster).write_to(&mut bytes.1).unwrap();
    assert_eq!(bytes.0, bytes.1);
    assert_eq!(c, build_content(&bucket, &roster, &vocab, &background()));
}

#[test]
fn binary_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bucket = random_bucket(4, 10, 5, 40);
    let c = build_content(&bucket, &users(10), &["a".into(), "c".into(), "zz".into()], &background());
    let path = dir.path().join("c.tmsp");
    c.save(&path).unwrap();
    assert_eq!(SparseMatrix::load(&path).unwrap(), c);
}

#[test]
fn planted_communities_give_block_dominant_adjacency() {
    let cfg = SynthConfig {
        seed: 3,
        background_tokens: 20_000,
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
    let m = &prep.bundle.manifests;
    let home = |u: &str| u.split('_').next().unwrap().to_string();
    for a in &prep.bundle.adjacency {
        let (mut inside, mut outside) = (0.0, 0.0);
        for (i, j, v) in a.entries() {
            if home(&m.roster[i]) == home(&m.context_roster[j]) {
                inside += v;
            } else {
                outside += v;
            }
        }
        assert!(outside < inside, "off-block {outside} vs in-block {inside}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Row i depends only on threads i joined.
    #[test]
    fn adjacency_row_is_local(seed in 0u64..10_000, tokens in 0usize..4) {
        let mut bucket = random_bucket(seed, 8, 6, 30);
        let roster = users(8);
        let before = build_adjacency(&bucket, &roster, &roster);
        let joined: BTreeSet<String> = bucket.iter().filter(|p| p.user_id == "u0").map(|p| p.thread_id.clone()).collect();
        for p in bucket.iter_mut() {
            if p.user_id != "u0" && !joined.contains(&p.thread_id) {
                p.thread_id = format!("{}_moved", p.thread_id);
                p.tokens.truncate(tokens);
            }
        }
        let after = build_adjacency(&bucket, &roster, &roster);
        let row = |m: &SparseMatrix| m.row_entries(0).collect::<Vec<_>>();
        prop_assert_eq!(row(&before), row(&after));
    }
}
