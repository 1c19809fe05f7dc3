//! Synthetic thread-structured corpora with planted communities, lexical
//! signatures, and scheduled drift events.
//!
//! Every post is written by a user with a home community. It lands in a
//! thread of the home community with probability `1 − ε` and in a uniformly
//! chosen thread of another community otherwise. Tokens are drawn from the
//! author's word distribution: shared words and foreign signature words have
//! weight 1, the home signature words have weight `signature_boost`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::cluster::{LabelLevel, LabelSet};
use crate::corpus::{write_jsonl, Post};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::factorize::{EmbeddingSet, Factor, Variant};

/// Directed override of the crossover probability from one community's
/// users into another community's threads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub from: usize,
    pub to: usize,
    pub p: f64,
}

/// Scheduled change; `at` is the 0-based window where it takes effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftEvent {
    /// The first `users` members of `from` adopt `to` as their home.
    UserMigration { at: usize, from: usize, to: usize, users: usize },
    /// `word` is unused before `at`; afterwards members of `community` use it
    /// with weight `weight` (default: the signature boost).
    WordAdoption {
        at: usize,
        community: usize,
        word: String,
        #[serde(default)]
        weight: Option<f64>,
    },
    /// The last `users` members of `community` move into threads of a new
    /// community and use lexicon words `lexicon_factor` times as often.
    Splinter {
        at: usize,
        community: usize,
        users: usize,
        lexicon_factor: f64,
        #[serde(default)]
        name: Option<String>,
    },
}

impl DriftEvent {
    fn at(&self) -> usize {
        match self {
            DriftEvent::UserMigration { at, .. }
            | DriftEvent::WordAdoption { at, .. }
            | DriftEvent::Splinter { at, .. } => *at,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub communities: usize,
    pub users_per_community: usize,
    pub timesteps: usize,
    /// Threads per community per window.
    pub threads_per_window: usize,
    /// Posts per active user per window.
    pub posts_per_user: usize,
    pub tokens_per_post: usize,
    /// Probability that a post lands in a foreign community's thread.
    pub crossover: f64,
    pub crossover_overrides: Vec<Crossover>,
    pub shared_words: usize,
    /// Signature words per signature group.
    pub signature_words: usize,
    pub signature_boost: f64,
    /// Signature group of each community; defaults to one group each.
    pub signature_groups: Option<Vec<usize>>,
    /// Concept words every user draws with weight 1.
    pub lexicon: Vec<String>,
    /// Category of each community; defaults to the community name.
    pub categories: Option<Vec<String>>,
    /// Probability that a user is active in a given window.
    pub activity: f64,
    pub start: i64,
    pub window_length: i64,
    pub background_tokens: usize,
    pub drift_events: Vec<DriftEvent>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            communities: 3,
            users_per_community: 30,
            timesteps: 6,
            threads_per_window: 6,
            posts_per_user: 10,
            tokens_per_post: 20,
            crossover: 0.1,
            crossover_overrides: Vec::new(),
            shared_words: 60,
            signature_words: 20,
            signature_boost: 10.0,
            signature_groups: None,
            lexicon: Vec::new(),
            categories: None,
            activity: 1.0,
            start: 1_514_764_800,
            window_length: 2_592_000,
            background_tokens: 200_000,
            drift_events: Vec::new(),
            seed: 0,
        }
    }
}

pub fn community_name(g: usize) -> String {
    format!("c{g}")
}

fn user_name(g: usize, i: usize) -> String {
    format!("u{g}_{i:03}")
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.communities == 0 || self.users_per_community == 0 || self.timesteps == 0 {
            return bad("communities, users_per_community and timesteps must be >= 1".into());
        }
        if self.threads_per_window == 0 || self.posts_per_user == 0 || self.tokens_per_post == 0 {
            return bad("threads_per_window, posts_per_user and tokens_per_post must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return bad("crossover must lie in [0, 1]".into());
        }
        if !(self.signature_boost >= 1.0) {
            return bad("signature_boost must be >= 1".into());
        }
        if !(self.activity > 0.0 && self.activity <= 1.0) {
            return bad("activity must lie in (0, 1]".into());
        }
        if self.shared_words + self.signature_words == 0 {
            return bad("vocabulary is empty".into());
        }
        if self.window_length <= 0 {
            return bad("window_length must be positive".into());
        }
        let g = self.communities;
        if let Some(groups) = &self.signature_groups {
            if groups.len() != g {
                return bad(format!("signature_groups needs {g} entries"));
            }
        }
        if let Some(c) = &self.categories {
            if c.len() != g {
                return bad(format!("categories needs {g} entries"));
            }
        }
        for o in &self.crossover_overrides {
            if o.from >= g || o.to >= g || o.from == o.to || !(0.0..=1.0).contains(&o.p) {
                return bad(format!("invalid crossover override {o:?}"));
            }
        }
        for e in &self.drift_events {
            if e.at() >= self.timesteps {
                return bad(format!("drift event at window {} is outside 0..{}", e.at(), self.timesteps));
            }
            match e {
                DriftEvent::UserMigration { from, to, users, .. } => {
                    if *from >= g || *to >= g || from == to || *users > self.users_per_community {
                        return bad(format!("invalid migration {e:?}"));
                    }
                }
                DriftEvent::WordAdoption { community, word, weight, .. } => {
                    if *community >= g || word.is_empty() || weight.is_some_and(|w| !(w > 0.0)) {
                        return bad(format!("invalid word adoption {e:?}"));
                    }
                }
                DriftEvent::Splinter { community, users, lexicon_factor, .. } => {
                    if *community >= g || *users == 0 || *users > self.users_per_community || !(*lexicon_factor >= 1.0) {
                        return bad(format!("invalid splinter {e:?}"));
                    }
                }
            }
        }
        Ok(())
    }

    fn signature_group(&self, g: usize) -> usize {
        self.signature_groups.as_ref().map_or(g, |v| v[g])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub user_id: String,
    pub t: usize,
    pub community: String,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub kind: String,
    pub at: usize,
    pub community: String,
    pub users: Vec<String>,
    pub words: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Home community of every active (user, window).
    pub labels: Vec<LabelRecord>,
    pub drift_log: Vec<DriftRecord>,
    pub communities: Vec<String>,
    pub config: SynthConfig,
}

impl GroundTruth {
    /// Home-community labels as a [`LabelSet`].
    pub fn label_set(&self, level: LabelLevel) -> LabelSet {
        let mut set = LabelSet {
            level: Some(level),
            ..LabelSet::default()
        };
        for r in &self.labels {
            let l = match level {
                LabelLevel::Community => &r.community,
                LabelLevel::Category => &r.category,
            };
            set.insert(&r.user_id, r.t, l);
        }
        set
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub posts: Vec<Post>,
    /// Posts of the window right after the last one.
    pub future: Vec<Post>,
    pub background: Vec<String>,
    pub truth: GroundTruth,
}

struct Community {
    name: String,
    category: String,
    sig_group: usize,
    since: usize,
}

struct Author {
    id: String,
    home: usize,
    lexicon_factor: f64,
}

struct Vocabulary {
    words: Vec<String>,
    /// Signature group of each word, if any.
    group: Vec<Option<usize>>,
    lexicon: Vec<bool>,
    /// Adoption word index → (community, weight, from window).
    adoption: BTreeMap<usize, (usize, f64, usize)>,
}

fn build_vocabulary(cfg: &SynthConfig) -> Vocabulary {
    let n_groups = (0..cfg.communities).map(|g| cfg.signature_group(g)).max().unwrap_or(0) + 1;
    let mut v = Vocabulary {
        words: Vec::new(),
        group: Vec::new(),
        lexicon: Vec::new(),
        adoption: BTreeMap::new(),
    };
    let push = |v: &mut Vocabulary, w: String, g: Option<usize>, lex: bool| {
        v.words.push(w);
        v.group.push(g);
        v.lexicon.push(lex);
        v.words.len() - 1
    };
    for j in 0..cfg.shared_words {
        push(&mut v, format!("w{j:03}"), None, false);
    }
    for s in 0..n_groups {
        for j in 0..cfg.signature_words {
            push(&mut v, format!("s{s}w{j:02}"), Some(s), false);
        }
    }
    for w in &cfg.lexicon {
        push(&mut v, w.to_lowercase(), None, true);
    }
    for e in &cfg.drift_events {
        if let DriftEvent::WordAdoption { at, community, word, weight } = e {
            let idx = push(&mut v, word.to_lowercase(), None, false);
            v.adoption.insert(idx, (*community, weight.unwrap_or(cfg.signature_boost), *at));
        }
    }
    v
}

fn word_weights(cfg: &SynthConfig, vocab: &Vocabulary, communities: &[Community], author: &Author, t: usize) -> Vec<f64> {
    let home = &communities[author.home];
    (0..vocab.words.len())
        .map(|z| {
            if let Some(&(c, w, at)) = vocab.adoption.get(&z) {
                return if author.home == c && t >= at { w } else { 0.0 };
            }
            if vocab.lexicon[z] {
                return author.lexicon_factor;
            }
            match vocab.group[z] {
                Some(g) if g == home.sig_group => cfg.signature_boost,
                _ => 1.0,
            }
        })
        .collect()
}

/// Probability that a post by a member of `from` lands in community `to`.
fn crossover_row(cfg: &SynthConfig, from: usize, live: &[usize]) -> Result<Vec<(usize, f64)>> {
    let others: Vec<usize> = live.iter().copied().filter(|&c| c != from).collect();
    if others.is_empty() {
        return Ok(vec![(from, 1.0)]);
    }
    let mut row: Vec<(usize, f64)> = others
        .iter()
        .map(|&c| {
            let p = cfg
                .crossover_overrides
                .iter()
                .find(|o| o.from == from && o.to == c)
                .map_or(cfg.crossover / others.len() as f64, |o| o.p);
            (c, p)
        })
        .collect();
    let own = 1.0 - row.iter().map(|x| x.1).sum::<f64>();
    if own < -1e-12 {
        return Err(Error::Config(format!(
            "crossover probabilities out of community {from} sum to more than 1"
        )));
    }
    row.push((from, own.max(0.0)));
    Ok(row)
}

/// Generates the corpus for `cfg.timesteps` windows plus one future window.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab = build_vocabulary(cfg);
    let mut communities: Vec<Community> = (0..cfg.communities)
        .map(|g| Community {
            name: community_name(g),
            category: cfg.categories.as_ref().map_or_else(|| community_name(g), |c| c[g].clone()),
            sig_group: cfg.signature_group(g),
            since: 0,
        })
        .collect();
    let mut authors: Vec<Author> = (0..cfg.communities)
        .flat_map(|g| {
            (0..cfg.users_per_community).map(move |i| Author {
                id: user_name(g, i),
                home: g,
                lexicon_factor: 1.0,
            })
        })
        .collect();

    let mut drift_log = Vec::new();
    let mut labels = Vec::new();
    let mut posts = Vec::new();
    let mut future = Vec::new();

    for t in 0..=cfg.timesteps {
        for e in cfg.drift_events.iter().filter(|e| e.at() == t) {
            apply_event(e, &mut communities, &mut authors, &vocab, &mut drift_log);
        }
        let live: Vec<usize> = (0..communities.len()).filter(|&c| communities[c].since <= t).collect();
        let rows = live
            .iter()
            .map(|&c| crossover_row(cfg, c, &live).map(|r| (c, r)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let window_start = cfg.start + t as i64 * cfg.window_length;

        for author in &authors {
            if cfg.activity < 1.0 && !rng.random_bool(cfg.activity) {
                continue;
            }
            let weights = word_weights(cfg, &vocab, &communities, author, t);
            let words = WeightedIndex::new(&weights).map_err(|e| Error::Config(format!("word weights: {e}")))?;
            let row = &rows[&author.home];
            let dest = WeightedIndex::new(row.iter().map(|x| x.1))
                .map_err(|e| Error::Config(format!("crossover weights: {e}")))?;
            if t < cfg.timesteps {
                let home = &communities[author.home];
                labels.push(LabelRecord {
                    user_id: author.id.clone(),
                    t,
                    community: home.name.clone(),
                    category: home.category.clone(),
                });
            }
            for _ in 0..cfg.posts_per_user {
                let c = row[dest.sample(&mut rng)].0;
                let thread = rng.random_range(0..cfg.threads_per_window);
                let tokens = (0..cfg.tokens_per_post)
                    .map(|_| vocab.words[words.sample(&mut rng)].clone())
                    .collect();
                let post = Post {
                    user_id: author.id.clone(),
                    thread_id: format!("{}-t{t}-{thread}", communities[c].name),
                    timestamp: window_start + rng.random_range(0..cfg.window_length),
                    community: communities[c].name.clone(),
                    category: communities[c].category.clone(),
                    tokens,
                };
                if t < cfg.timesteps {
                    posts.push(post);
                } else {
                    future.push(post);
                }
            }
        }
    }
    let order = |a: &Post, b: &Post| {
        (a.timestamp, &a.user_id, &a.thread_id).cmp(&(b.timestamp, &b.user_id, &b.thread_id))
    };
    posts.sort_by(order);
    future.sort_by(order);

    let background = (0..cfg.background_tokens)
        .map(|_| vocab.words[rng.random_range(0..vocab.words.len())].clone())
        .collect();

    Ok(SynthOutput {
        posts,
        future,
        background,
        truth: GroundTruth {
            labels,
            drift_log,
            communities: communities.iter().map(|c| c.name.clone()).collect(),
            config: cfg.clone(),
        },
    })
}

fn apply_event(
    e: &DriftEvent,
    communities: &mut Vec<Community>,
    authors: &mut [Author],
    vocab: &Vocabulary,
    log: &mut Vec<DriftRecord>,
) {
    let members = |authors: &[Author], g: usize| -> Vec<usize> {
        (0..authors.len()).filter(|&i| authors[i].home == g).collect()
    };
    match e {
        DriftEvent::UserMigration { at, from, to, users } => {
            let moved: Vec<usize> = members(authors, *from).into_iter().take(*users).collect();
            for &i in &moved {
                authors[i].home = *to;
            }
            log.push(DriftRecord {
                kind: "user_migration".into(),
                at: *at,
                community: communities[*to].name.clone(),
                users: moved.iter().map(|&i| authors[i].id.clone()).collect(),
                words: vec![],
            });
        }
        DriftEvent::WordAdoption { at, community, word, .. } => log.push(DriftRecord {
            kind: "word_adoption".into(),
            at: *at,
            community: communities[*community].name.clone(),
            users: members(authors, *community).iter().map(|&i| authors[i].id.clone()).collect(),
            words: vec![word.to_lowercase()],
        }),
        DriftEvent::Splinter { at, community, users, lexicon_factor, name } => {
            let parent = &communities[*community];
            let new = Community {
                name: name.clone().unwrap_or_else(|| format!("{}_splinter", parent.name)),
                category: parent.category.clone(),
                sig_group: parent.sig_group,
                since: *at,
            };
            communities.push(new);
            let idx = communities.len() - 1;
            let m = members(authors, *community);
            let moved: Vec<usize> = m[m.len().saturating_sub(*users)..].to_vec();
            for &i in &moved {
                authors[i].home = idx;
                authors[i].lexicon_factor = *lexicon_factor;
            }
            log.push(DriftRecord {
                kind: "splinter".into(),
                at: *at,
                community: communities[idx].name.clone(),
                users: moved.iter().map(|&i| authors[i].id.clone()).collect(),
                words: (0..vocab.words.len())
                    .filter(|&z| vocab.lexicon[z])
                    .map(|z| vocab.words[z].clone())
                    .collect(),
            });
        }
    }
}

/// Writes `corpus.jsonl`, `future.jsonl`, `background.txt`, and
/// `ground_truth.json` into `dir`.
pub fn write_outputs(out: &SynthOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(&dir.join("corpus.jsonl"), &out.posts)?;
    write_jsonl(&dir.join("future.jsonl"), &out.future)?;
    let mut text = String::new();
    for chunk in out.background.chunks(20) {
        text.push_str(&chunk.join(" "));
        text.push('\n');
    }
    let path = dir.join("background.txt");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("ground_truth.json");
    let json = serde_json::to_string_pretty(&out.truth).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// User embeddings moving on straight lines, `u_t = u_0 + t·δ_i`, with
/// `u_0 ~ N(0, I)` and `δ_i = δ + drift_spread·N(0, I)` around a shared
/// drift `δ ~ N(0, 0.2²I)`. Word factors are a single zero row.
pub fn affine_trajectories(
    users: usize,
    timesteps: usize,
    k: usize,
    drift_spread: f64,
    seed: u64,
) -> Result<(EmbeddingSet, Vec<String>)> {
    if users == 0 || timesteps == 0 || k == 0 {
        return Err(Error::Config("users, timesteps and k must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |n: usize, scale: f64| -> Vec<f64> { (0..n).map(|_| scale * normal.sample(&mut rng)).collect() };
    let delta = draw(k, 0.2);
    let start = draw(users * k, 1.0);
    let drift: Vec<f64> = draw(users * k, drift_spread)
        .into_iter()
        .enumerate()
        .map(|(idx, d)| d + delta[idx % k])
        .collect();
    let user = (0..timesteps)
        .map(|t| Matrix::from_vec(users, k, start.iter().zip(&drift).map(|(u, d)| u + t as f64 * d).collect()))
        .collect::<Result<Vec<_>>>()?;
    let model = EmbeddingSet {
        variant: Variant::NoAdj,
        k,
        timesteps,
        user: Factor::Dynamic(user),
        context: None,
        word: Factor::Static(Matrix::zeros(1, k)),
        adjacency_bias: None,
        content_bias: None,
    };
    Ok((model, (0..users).map(|i| format!("u{i:03}")).collect()))
}
