use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Forecaster;
use crate::corpus::{Bucket, Post};
use crate::dense::{cosine, Matrix};
use crate::error::{Error, Result};
use crate::factorize::EmbeddingSet;

/// User `user` (roster index) posted in `community` during window `t`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub t: usize,
    pub community: String,
}

/// Distinct (user, t, community) triples for roster users, sorted.
pub fn interactions_from_buckets(buckets: &[Bucket], roster: &[String]) -> Vec<Interaction> {
    let index: BTreeMap<&str, usize> = roster.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut set = BTreeSet::new();
    for (t, bucket) in buckets.iter().enumerate() {
        for p in bucket {
            if let Some(&user) = index.get(p.user_id.as_str()) {
                set.insert(Interaction {
                    user,
                    t,
                    community: p.community.clone(),
                });
            }
        }
    }
    set.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityCentroids {
    pub names: Vec<String>,
    /// One row per community, in `names` order.
    pub centroids: Matrix,
}

/// Mean of `U_t[user]` over the interactions of each community.
pub fn community_centroids(
    model: &EmbeddingSet,
    communities: &[String],
    interactions: &[Interaction],
) -> Result<CommunityCentroids> {
    let k = model.k;
    let mut sums = vec![vec![0.0; k]; communities.len()];
    let mut counts = vec![0usize; communities.len()];
    let index: BTreeMap<&str, usize> = communities.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut seen = BTreeSet::new();
    for it in interactions {
        let Some(&c) = index.get(it.community.as_str()) else {
            continue;
        };
        if it.t >= model.timesteps || it.user >= model.users() {
            return Err(Error::Dimension(format!(
                "interaction (user {}, t {}) lies outside the model",
                it.user, it.t
            )));
        }
        if !seen.insert((c, it.user, it.t)) {
            continue;
        }
        for (s, v) in sums[c].iter_mut().zip(model.user_at(it.t).row(it.user)) {
            *s += v;
        }
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Empty(format!("community '{}' has no interacting users", communities[c])));
    }
    let data: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .flat_map(|(s, &n)| s.iter().map(move |v| v / n as f64))
        .collect();
    Ok(CommunityCentroids {
        names: communities.to_vec(),
        centroids: Matrix::from_vec(communities.len(), k, data)?,
    })
}

/// Per roster user, post counts per community normalised by their maximum;
/// `None` for users without posts.
pub fn engagement_targets(posts: &[Post], roster: &[String], communities: &[String]) -> Vec<Option<Vec<f64>>> {
    let users: BTreeMap<&str, usize> = roster.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let comms: BTreeMap<&str, usize> = communities.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut f = vec![vec![0.0; communities.len()]; roster.len()];
    for p in posts {
        if let (Some(&i), Some(&c)) = (users.get(p.user_id.as_str()), comms.get(p.community.as_str())) {
            f[i][c] += 1.0;
        }
    }
    f.into_iter()
        .map(|row| {
            let max = row.iter().cloned().fold(0.0, f64::max);
            (max > 0.0).then(|| row.iter().map(|v| v / max).collect())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityPrediction {
    pub user_id: String,
    pub s: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub y_true: Option<Vec<f64>>,
    /// Every similarity was non-positive, so `y_hat` was min-max rescaled.
    pub degenerate: bool,
}

/// Max-normalised cosine similarities of the forecast next embedding to
/// every community centroid.
pub fn predict_affinity(
    forecaster: &Forecaster,
    user_id: &str,
    history: &[Vec<f64>],
    centroids: &CommunityCentroids,
) -> Result<AffinityPrediction> {
    if centroids.names.is_empty() {
        return Err(Error::Empty("no community centroids".into()));
    }
    if history.is_empty() {
        return Err(Error::Empty(format!("user '{user_id}' has no history")));
    }
    let u = forecaster.predict(history);
    let s: Vec<f64> = centroids
        .centroids
        .iter_rows()
        .map(|c| cosine(&u, c).unwrap_or(0.0))
        .collect();
    let (y_hat, degenerate) = normalise_similarities(&s);
    Ok(AffinityPrediction {
        user_id: user_id.to_string(),
        s,
        y_hat,
        y_true: None,
        degenerate,
    })
}

pub(crate) fn normalise_similarities(s: &[f64]) -> (Vec<f64>, bool) {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        return (s.iter().map(|v| v / max).collect(), false);
    }
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = max - min;
    let y = if span > 0.0 {
        s.iter().map(|v| (v - min) / span).collect()
    } else {
        vec![1.0; s.len()]
    };
    (y, true)
}
