use dyntmf::corpus::{
    build_background, build_vocab, filter_users, load_corpus, partition_timesteps, select_context_users, write_jsonl,
    BackgroundModel, CorpusFormat, CorpusStore, FilterConfig, Post, TimeWindowing,
};
use proptest::prelude::*;

fn post(user: &str, thread: &str, ts: i64, tokens: &[&str]) -> Post {
    Post {
        user_id: user.into(),
        thread_id: thread.into(),
        timestamp: ts,
        community: "c".into(),
        category: "k".into(),
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let posts = vec![
        post("a", "t1", 5, &["x", "y"]),
        post("b", "t1", 7, &[]),
        post("c", "t2", 9, &["ünï", "z"]),
    ];
    write_jsonl(&path, &posts).unwrap();
    let store = load_corpus(&path, CorpusFormat::Jsonl).unwrap();
    assert_eq!(store.posts, posts);
}

#[test]
fn background_from_token_file_and_jsonl_agree() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("bg.txt");
    std::fs::write(&plain, "a a\nb\n").unwrap();
    let json = dir.path().join("bg.jsonl");
    write_jsonl(&json, &[post("u", "t", 0, &["a", "b"]), post("u", "t", 1, &["a"])]).unwrap();
    let x = build_background(&plain).unwrap();
    assert_eq!(x, build_background(&json).unwrap());
    assert_eq!(x.probability("a"), 2.0 / 3.0);
    assert_eq!(x.probability("b"), 1.0 / 3.0);
    assert_eq!(x.probability("q"), 0.25);
    std::fs::write(&plain, "\n \n").unwrap();
    assert!(build_background(&plain).is_err());
}

#[test]
fn single_word_background() {
    let bg = BackgroundModel::from_tokens(["w"]).unwrap();
    assert_eq!(bg.probability("w"), 1.0);
}

#[test]
fn four_users_with_spans_one_two_three_five() {
    let windows = TimeWindowing::fixed(0, 10, 5).unwrap();
    let mut posts = Vec::new();
    for (u, span) in [("a", 1), ("b", 2), ("c", 3), ("d", 5)] {
        for t in 0..span {
            posts.push(post(u, "t", t * 10 + 1, &["w"]));
        }
    }
    let buckets = partition_timesteps(&CorpusStore::new(posts), &windows).unwrap();
    let roster = filter_users(&buckets, &FilterConfig::default()).unwrap();
    assert_eq!(roster, vec!["c".to_string(), "d".to_string()]);
}

#[test]
fn full_context_roster_keeps_everyone() {
    let windows = TimeWindowing::fixed(0, 10, 1).unwrap();
    let posts = vec![post("b", "t", 1, &[]), post("a", "t", 2, &[]), post("a", "t", 3, &[])];
    let buckets = partition_timesteps(&CorpusStore::new(posts), &windows).unwrap();
    let roster = vec!["a".to_string(), "b".to_string()];
    let cfg = FilterConfig {
        n_context_users: 2,
        ..FilterConfig::default()
    };
    assert_eq!(select_context_users(&buckets, &roster, &cfg).unwrap(), roster);
    let cfg = FilterConfig {
        n_context_users: 1,
        ..cfg
    };
    assert_eq!(select_context_users(&buckets, &roster, &cfg).unwrap(), vec!["a".to_string()]);
}

#[test]
fn monthly_windows_over_nine_months() {
    let w = TimeWindowing::monthly(2018, 4, 9).unwrap();
    assert_eq!(w.count(), 9);
    // 2018-04-01 and 2019-01-01 UTC.
    assert_eq!(w.start(), 1_522_540_800);
    assert_eq!(w.end(), 1_546_300_800);
}

proptest! {
    #[test]
    fn partition_is_total_and_disjoint(stamps in prop::collection::vec(0i64..600, 0..80), t in 1usize..7) {
        let windows = TimeWindowing::fixed(0, 100, 6).unwrap();
        let stamps: Vec<i64> = stamps.into_iter().filter(|s| *s < 100 * t as i64).collect();
        let posts: Vec<Post> = stamps.iter().map(|&s| post("u", "t", s, &[])).collect();
        let store = CorpusStore::new(posts);
        let buckets = partition_timesteps(&store, &windows).unwrap();
        prop_assert_eq!(buckets.iter().map(Vec::len).sum::<usize>(), store.len());
        for (i, b) in buckets.iter().enumerate() {
            prop_assert!(b.iter().all(|p| p.timestamp / 100 == i as i64));
        }
    }

    #[test]
    fn background_probabilities_sum_to_one(words in prop::collection::vec("[a-e]{1,3}", 1..200)) {
        let bg = BackgroundModel::from_tokens(words.iter()).unwrap();
        let total: f64 = bg.observed_words().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(bg.oov_floor() > 0.0);
    }

    #[test]
    fn manifests_are_deterministic(seed in 0u64..1000) {
        let posts: Vec<Post> = (0..60u64)
            .map(|i| {
                let u = format!("u{}", (i * 7 + seed) % 13);
                let w = format!("w{}", (i * 3 + seed) % 5);
                post(&u, "t", ((i * 11 + seed) % 40) as i64, &[w.as_str()])
            })
            .collect();
        let windows = TimeWindowing::fixed(0, 10, 4).unwrap();
        let buckets = partition_timesteps(&CorpusStore::new(posts), &windows).unwrap();
        let cfg = FilterConfig { min_active_timesteps: 1, n_context_users: 3, min_word_users: 1 };
        let roster = filter_users(&buckets, &cfg).unwrap();
        prop_assert!(roster.windows(2).all(|w| w[0] < w[1]));
        let vocab = build_vocab(&buckets, &roster, &cfg);
        let again = build_vocab(&buckets, &roster, &cfg);
        prop_assert_eq!(vocab.ok(), again.ok());
    }
}
