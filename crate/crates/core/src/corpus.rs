//! Loading, windowing and filtering of thread-structured conversation data.
//!
//! Indices into the roster, context roster and vocabulary produced here are
//! the row/column ids of every matrix downstream, so all orderings are
//! deterministic (lexicographic unless stated otherwise).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One authored message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub user_id: String,
    pub thread_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub community: String,
    pub category: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusStore {
    pub posts: Vec<Post>,
}

impl CorpusStore {
    pub fn new(posts: Vec<Post>) -> Self {
        CorpusStore { posts }
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }
}

/// Input formats understood by [`load_corpus`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<CorpusStore> {
    match format {
        CorpusFormat::Jsonl => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_jsonl(BufReader::new(file)).map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
        }
    }
}

/// Parses JSONL posts from any reader. Blank lines are skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<CorpusStore> {
    let mut posts = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        posts.push(parse_post(&line, line_no)?);
    }
    Ok(CorpusStore { posts })
}

fn parse_post(line: &str, line_no: usize) -> Result<Post> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| Error::Parse(format!("malformed JSON at line {line_no}: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse(format!("line {line_no} is not a JSON object")))?;

    let string_field = |field: &'static str| -> Result<String> {
        match obj.get(field) {
            None | Some(Value::Null) => Err(Error::MissingField {
                field,
                line: line_no,
            }),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(Error::Parse(format!(
                "field {field} at line {line_no} must be a string, got {other}"
            ))),
        }
    };

    let user_id = string_field("user_id")?;
    let thread_id = string_field("thread_id")?;
    if user_id.is_empty() || thread_id.is_empty() {
        return Err(Error::Parse(format!(
            "empty user_id or thread_id at line {line_no}"
        )));
    }
    let timestamp = match obj.get("timestamp") {
        None | Some(Value::Null) => {
            return Err(Error::MissingField {
                field: "timestamp",
                line: line_no,
            })
        }
        Some(v) => v.as_i64().filter(|t| *t >= 0).ok_or_else(|| {
            Error::Parse(format!(
                "timestamp at line {line_no} must be a non-negative integer"
            ))
        })?,
    };
    let community = string_field("community")?;
    let category = string_field("category")?;
    let tokens = match obj.get("tokens") {
        None | Some(Value::Null) => {
            return Err(Error::MissingField {
                field: "tokens",
                line: line_no,
            })
        }
        Some(Value::Array(items)) => items
            .iter()
            .map(|t| {
                t.as_str().map(str::to_lowercase).ok_or_else(|| {
                    Error::Parse(format!("non-string token at line {line_no}"))
                })
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => {
            return Err(Error::Parse(format!(
                "tokens at line {line_no} must be an array"
            )))
        }
    };

    Ok(Post {
        user_id,
        thread_id,
        timestamp,
        community,
        category,
        tokens,
    })
}

pub fn write_jsonl(path: &Path, posts: &[Post]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in posts {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Consecutive half-open time windows `[b_t, b_{t+1})`.
///
/// Windows are stored as explicit boundaries so calendar months (unequal
/// lengths) and fixed-length windows share one representation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindowing {
    boundaries: Vec<i64>,
}

impl TimeWindowing {
    pub fn fixed(start: i64, window_length: i64, count: usize) -> Result<Self> {
        if window_length <= 0 {
            return Err(Error::Config("window_length must be positive".into()));
        }
        if count == 0 {
            return Err(Error::Config("need at least one window".into()));
        }
        let boundaries = (0..=count as i64).map(|t| start + t * window_length).collect();
        Ok(TimeWindowing { boundaries })
    }

    /// UTC calendar months starting at `year-month-01T00:00:00Z`.
    pub fn monthly(year: i32, month: u32, count: usize) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Config(format!("month {month} out of range")));
        }
        if count == 0 {
            return Err(Error::Config("need at least one window".into()));
        }
        let mut boundaries = Vec::with_capacity(count + 1);
        let (mut y, mut m) = (year, month);
        for _ in 0..=count {
            boundaries.push(days_from_civil(y, m, 1) * 86_400);
            m += 1;
            if m == 13 {
                m = 1;
                y += 1;
            }
        }
        Ok(TimeWindowing { boundaries })
    }

    pub fn from_boundaries(boundaries: Vec<i64>) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Config("need at least one window".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "window boundaries must be strictly increasing".into(),
            ));
        }
        Ok(TimeWindowing { boundaries })
    }

    pub fn count(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn start(&self) -> i64 {
        self.boundaries[0]
    }

    pub fn end(&self) -> i64 {
        *self.boundaries.last().unwrap()
    }

    pub fn boundaries(&self) -> &[i64] {
        &self.boundaries
    }

    /// Window index of `timestamp`, if it falls inside the covered range.
    pub fn window_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.start() || timestamp >= self.end() {
            return None;
        }
        // Index of the last boundary <= timestamp.
        Some(self.boundaries.partition_point(|b| *b <= timestamp) - 1)
    }
}

// Howard Hinnant's days_from_civil.
fn days_from_civil(y: i32, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y } as i64;
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let m = m as i64;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

/// Posts of one time window.
pub type Bucket = Vec<Post>;

pub fn partition_timesteps(store: &CorpusStore, windows: &TimeWindowing) -> Result<Vec<Bucket>> {
    let mut buckets = vec![Vec::new(); windows.count()];
    let mut outside = Vec::new();
    for (i, post) in store.posts.iter().enumerate() {
        match windows.window_of(post.timestamp) {
            Some(t) => buckets[t].push(post.clone()),
            None => outside.push(i),
        }
    }
    if !outside.is_empty() {
        let shown: Vec<String> = outside
            .iter()
            .take(10)
            .map(|&i| {
                let p = &store.posts[i];
                format!("#{i} (user {}, timestamp {})", p.user_id, p.timestamp)
            })
            .collect();
        return Err(Error::Parse(format!(
            "{} post(s) outside [{}, {}): {}{}",
            outside.len(),
            windows.start(),
            windows.end(),
            shown.join(", "),
            if outside.len() > 10 { ", ..." } else { "" }
        )));
    }
    Ok(buckets)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub min_active_timesteps: usize,
    pub n_context_users: usize,
    pub min_word_users: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_active_timesteps: 3,
            n_context_users: 10_000,
            min_word_users: 20,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_active_timesteps == 0 || self.n_context_users == 0 || self.min_word_users == 0
        {
            return Err(Error::Config("filter thresholds must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Users with at least one post in `min_active_timesteps` or more distinct
/// buckets, sorted by id.
pub fn filter_users(buckets: &[Bucket], cfg: &FilterConfig) -> Result<Vec<String>> {
    if buckets.is_empty() {
        return Err(Error::Empty("no timesteps to filter".into()));
    }
    let mut active: BTreeMap<&str, usize> = BTreeMap::new();
    for bucket in buckets {
        let users: BTreeSet<&str> = bucket.iter().map(|p| p.user_id.as_str()).collect();
        for u in users {
            *active.entry(u).or_default() += 1;
        }
    }
    let roster: Vec<String> = active
        .into_iter()
        .filter(|(_, n)| *n >= cfg.min_active_timesteps)
        .map(|(u, _)| u.to_string())
        .collect();
    if roster.is_empty() {
        return Err(Error::Empty("no users survive filtering".into()));
    }
    Ok(roster)
}

/// The `n_context_users` most prolific roster users (total posts over all
/// buckets), ties broken by id. Returned in rank order.
pub fn select_context_users(
    buckets: &[Bucket],
    roster: &[String],
    cfg: &FilterConfig,
) -> Result<Vec<String>> {
    if cfg.n_context_users > roster.len() {
        return Err(Error::Config(format!(
            "n_context_users = {} exceeds the {} available users",
            cfg.n_context_users,
            roster.len()
        )));
    }
    let mut counts: HashMap<&str, usize> = roster.iter().map(|u| (u.as_str(), 0)).collect();
    for post in buckets.iter().flatten() {
        if let Some(c) = counts.get_mut(post.user_id.as_str()) {
            *c += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked
        .into_iter()
        .take(cfg.n_context_users)
        .map(|(u, _)| u.to_string())
        .collect())
}

/// Words used by strictly more than `min_word_users` distinct roster users,
/// counted over all buckets.
pub fn build_vocab(buckets: &[Bucket], roster: &[String], cfg: &FilterConfig) -> Result<Vec<String>> {
    let members: BTreeSet<&str> = roster.iter().map(String::as_str).collect();
    let mut users_per_word: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for post in buckets.iter().flatten() {
        if !members.contains(post.user_id.as_str()) {
            continue;
        }
        for tok in &post.tokens {
            users_per_word
                .entry(tok.as_str())
                .or_default()
                .insert(post.user_id.as_str());
        }
    }
    let mut vocab: Vec<String> = users_per_word
        .into_iter()
        .filter(|(_, users)| users.len() > cfg.min_word_users)
        .map(|(w, _)| w.to_string())
        .collect();
    if vocab.is_empty() {
        return Err(Error::Empty("empty vocabulary after filtering".into()));
    }
    vocab.sort();
    Ok(vocab)
}

/// Unigram probabilities of a background corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    counts: BTreeMap<String, u64>,
    total_token_count: u64,
}

impl BackgroundModel {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut total = 0u64;
        for t in tokens {
            *counts.entry(t.as_ref().to_lowercase()).or_default() += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::Empty("background corpus is empty".into()));
        }
        Ok(BackgroundModel {
            counts,
            total_token_count: total,
        })
    }

    pub fn total_token_count(&self) -> u64 {
        self.total_token_count
    }

    /// Probability assigned to words never seen in the background corpus.
    pub fn oov_floor(&self) -> f64 {
        1.0 / (self.total_token_count as f64 + 1.0)
    }

    pub fn probability(&self, word: &str) -> f64 {
        match self.counts.get(word) {
            Some(&c) => c as f64 / self.total_token_count as f64,
            None => self.oov_floor(),
        }
    }

    pub fn observed_words(&self) -> impl Iterator<Item = (&str, f64)> {
        let n = self.total_token_count as f64;
        self.counts.iter().map(move |(w, c)| (w.as_str(), *c as f64 / n))
    }
}

/// Reads a background corpus: JSONL posts when the first non-blank line is a
/// JSON object, otherwise a whitespace-separated token stream.
pub fn build_background(path: &Path) -> Result<BackgroundModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|e| Error::io(path, e))?);
    }
    let is_jsonl = lines
        .iter()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'));
    if is_jsonl {
        let store = read_jsonl(lines.join("\n").as_bytes())?;
        BackgroundModel::from_tokens(store.posts.iter().flat_map(|p| p.tokens.iter()))
    } else {
        BackgroundModel::from_tokens(lines.iter().flat_map(|l| l.split_whitespace()))
    }
}
