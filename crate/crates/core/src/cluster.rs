//! K-means over stacked (user, timestep) embeddings and multilabel purity.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Bucket;
use crate::dense::{squared_distance, Matrix};
use crate::error::{Error, Result};
use crate::factorize::EmbeddingSet;
use crate::par;

pub const DEFAULT_MAX_ITERS: usize = 300;

/// One row per active (user, timestep) pair, t-major.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedEmbeddings {
    pub keys: Vec<(String, usize)>,
    pub x: Matrix,
}

impl StackedEmbeddings {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Stacks `U_t[i]` for every pair with `activity[t][i]` set.
pub fn stack(model: &EmbeddingSet, roster: &[String], activity: &[Vec<bool>]) -> Result<StackedEmbeddings> {
    if roster.len() != model.users() {
        return Err(Error::Dimension(format!(
            "roster has {} users, model has {}",
            roster.len(),
            model.users()
        )));
    }
    if activity.len() != model.timesteps {
        return Err(Error::Dimension(format!(
            "activity covers {} timesteps, model has {}",
            activity.len(),
            model.timesteps
        )));
    }
    let mut keys = Vec::new();
    let mut data = Vec::new();
    for (t, active) in activity.iter().enumerate() {
        if active.len() != roster.len() {
            return Err(Error::Dimension(format!("activity row {t} has wrong length")));
        }
        let u = model.user_at(t);
        for (i, _) in active.iter().enumerate().filter(|(_, a)| **a) {
            keys.push((roster[i].clone(), t));
            data.extend_from_slice(u.row(i));
        }
    }
    let x = Matrix::from_vec(keys.len(), model.k, data)?;
    if !x.is_finite() {
        return Err(Error::NonFinite("stacked embeddings".into()));
    }
    Ok(StackedEmbeddings { keys, x })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    #[serde(rename = "K")]
    pub n_clusters: usize,
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub seed: u64,
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub inertia: Vec<f64>,
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x.iter_rows().map(|r| squared_distance(r, x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = d2.iter().rposition(|d| *d > 0.0).unwrap();
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, row) in x.iter_rows().enumerate() {
            d2[i] = d2[i].min(squared_distance(row, x.row(pick)));
        }
    }
    centroids
}

fn update_centroids(x: &Matrix, assignment: &[usize], k: usize) -> Matrix {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(i);
    }
    let dim = x.cols();
    let rows = par::map_slice(&members, |idx| {
        let mut mean = vec![0.0; dim];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        if !idx.is_empty() {
            let n = idx.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        mean
    });
    Matrix::from_vec(k, dim, rows.concat()).expect("centroid shape")
}

/// Moves the farthest point of the largest cluster into each empty cluster.
fn repair_empty(x: &Matrix, assignment: &mut [usize], centroids: &Matrix, k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in assignment.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).unwrap();
        if sizes[largest] < 2 {
            return;
        }
        let mut far = (usize::MAX, -1.0);
        for (i, &c) in assignment.iter().enumerate() {
            if c == largest {
                let d = squared_distance(x.row(i), centroids.row(largest));
                if d > far.1 {
                    far = (i, d);
                }
            }
        }
        assignment[far.0] = empty;
    }
}

fn inertia(x: &Matrix, assignment: &[usize], centroids: &Matrix) -> f64 {
    x.iter_rows()
        .zip(assignment)
        .map(|(r, &c)| squared_distance(r, centroids.row(c)))
        .sum()
}

/// Seeded k-means++ followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<ClusterModel> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("K = {k} must lie in [1, {n}]")));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus(x, k, &mut rng);
    let mut assignment: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        let mut next: Vec<usize> = par::map_indices(n, |i| nearest(x.row(i), &centroids).0);
        repair_empty(x, &mut next, &centroids, k);
        if next == assignment {
            break;
        }
        assignment = next;
        centroids = update_centroids(x, &assignment, k);
        trace.push(inertia(x, &assignment, &centroids));
        iterations += 1;
    }
    Ok(ClusterModel {
        n_clusters: k,
        centroids,
        assignment,
        seed,
        iterations,
        inertia: trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelLevel {
    Category,
    #[serde(alias = "subreddit")]
    Community,
}

impl LabelLevel {
    pub fn name(self) -> &'static str {
        match self {
            LabelLevel::Category => "category",
            LabelLevel::Community => "community",
        }
    }
}

/// Class labels per (user, timestep).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelSet {
    pub level: Option<LabelLevel>,
    pub labels: BTreeMap<(String, usize), BTreeSet<String>>,
}

impl LabelSet {
    pub fn get(&self, user: &str, t: usize) -> Option<&BTreeSet<String>> {
        self.labels.get(&(user.to_string(), t))
    }

    pub fn insert(&mut self, user: &str, t: usize, label: &str) {
        self.labels
            .entry((user.to_string(), t))
            .or_default()
            .insert(label.to_string());
    }

    pub fn classes(&self) -> BTreeSet<String> {
        self.labels.values().flatten().cloned().collect()
    }
}

/// Labels every (user, t) with the communities (or categories) the user
/// posted in during window `t`.
pub fn labels_from_buckets(buckets: &[Bucket], level: LabelLevel) -> LabelSet {
    let mut set = LabelSet {
        level: Some(level),
        labels: BTreeMap::new(),
    };
    for (t, bucket) in buckets.iter().enumerate() {
        for p in bucket {
            let label = match level {
                LabelLevel::Category => &p.category,
                LabelLevel::Community => &p.community,
            };
            set.insert(&p.user_id, t, label);
        }
    }
    set
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Purity {
    /// `None` for clusters without labelled rows.
    pub per_cluster: Vec<Option<f64>>,
    /// Unweighted mean over clusters with at least one labelled row.
    pub mean: f64,
    /// Mean weighted by labelled-row count.
    pub weighted_mean: f64,
    pub labelled_rows: usize,
}

/// Multilabel purity: per cluster, the largest number of labelled rows
/// sharing one class, over the number of labelled rows.
pub fn purity(cm: &ClusterModel, keys: &[(String, usize)], labels: &LabelSet) -> Result<Purity> {
    if keys.len() != cm.assignment.len() {
        return Err(Error::Dimension(format!(
            "{} keys for {} assigned rows",
            keys.len(),
            cm.assignment.len()
        )));
    }
    let mut counts: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); cm.n_clusters];
    let mut labelled = vec![0usize; cm.n_clusters];
    for ((user, t), &c) in keys.iter().zip(&cm.assignment) {
        let Some(set) = labels.get(user, *t) else {
            continue;
        };
        if set.is_empty() {
            continue;
        }
        labelled[c] += 1;
        for l in set {
            *counts[c].entry(l.as_str()).or_default() += 1;
        }
    }
    let total: usize = labelled.iter().sum();
    if total == 0 {
        return Err(Error::Empty("no clustered row carries a label".into()));
    }
    let per_cluster: Vec<Option<f64>> = counts
        .iter()
        .zip(&labelled)
        .map(|(cnt, &n)| (n > 0).then(|| *cnt.values().max().unwrap() as f64 / n as f64))
        .collect();
    let scored: Vec<f64> = per_cluster.iter().flatten().copied().collect();
    let mean = scored.iter().sum::<f64>() / scored.len() as f64;
    let weighted_mean = per_cluster
        .iter()
        .zip(&labelled)
        .filter_map(|(p, &n)| p.map(|p| p * n as f64))
        .sum::<f64>()
        / total as f64;
    Ok(Purity {
        per_cluster,
        mean,
        weighted_mean,
        labelled_rows: total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityRow {
    #[serde(rename = "K")]
    pub n_clusters: usize,
    pub level: String,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// Mean and standard deviation of mean purity over `n_seeds` k-means runs
/// (seeds `base_seed..base_seed + n_seeds`) for every K and label level.
pub fn purity_report(
    stacked: &StackedEmbeddings,
    label_sets: &[(String, &LabelSet)],
    k_list: &[usize],
    n_seeds: usize,
    base_seed: u64,
) -> Result<Vec<PurityRow>> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for &k in k_list {
        let models = (0..n_seeds as u64)
            .map(|s| kmeans(&stacked.x, k, base_seed + s, DEFAULT_MAX_ITERS))
            .collect::<Result<Vec<_>>>()?;
        for (level, labels) in label_sets {
            let per_seed = models
                .iter()
                .map(|m| purity(m, &stacked.keys, labels).map(|p| p.mean))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&per_seed);
            rows.push(PurityRow {
                n_clusters: k,
                level: level.clone(),
                mean,
                std,
                per_seed,
            });
        }
    }
    Ok(rows)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(n: usize) -> Vec<(String, usize)> {
        (0..n).map(|i| (format!("u{i}"), 0)).collect()
    }

    #[test]
    fn multilabel_purity_counts_dominant_class() {
        let cm = ClusterModel {
            n_clusters: 1,
            centroids: Matrix::zeros(1, 1),
            assignment: vec![0; 4],
            seed: 0,
            iterations: 0,
            inertia: vec![],
        };
        let mut labels = LabelSet::default();
        labels.insert("u0", 0, "a");
        labels.insert("u1", 0, "a");
        labels.insert("u2", 0, "a");
        labels.insert("u2", 0, "b");
        labels.insert("u3", 0, "b");
        let p = purity(&cm, &keys(4), &labels).unwrap();
        assert_eq!(p.mean, 0.75);
    }

    #[test]
    fn unlabelled_rows_are_ignored() {
        let cm = ClusterModel {
            n_clusters: 2,
            centroids: Matrix::zeros(2, 1),
            assignment: vec![0, 0, 1],
            seed: 0,
            iterations: 0,
            inertia: vec![],
        };
        let mut labels = LabelSet::default();
        labels.insert("u0", 0, "a");
        let p = purity(&cm, &keys(3), &labels).unwrap();
        assert_eq!(p.per_cluster, vec![Some(1.0), None]);
        assert_eq!(p.mean, 1.0);
        assert!(purity(&cm, &keys(3), &LabelSet::default()).is_err());
    }

    #[test]
    fn single_cluster_centroid_is_column_mean() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]]).unwrap();
        let cm = kmeans(&x, 1, 3, 10).unwrap();
        assert_eq!(cm.centroids.row(0), x.column_mean().as_slice());
    }

    #[test]
    fn one_cluster_per_row() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0], vec![9.0]]).unwrap();
        let cm = kmeans(&x, 4, 0, 10).unwrap();
        let mut seen = cm.assignment.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_rows_still_fill_every_cluster() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let cm = kmeans(&x, 3, 0, 10).unwrap();
        let mut seen = cm.assignment.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn invalid_k_rejected() {
        let x = Matrix::zeros(2, 2);
        assert!(kmeans(&x, 0, 0, 10).is_err());
        assert!(kmeans(&x, 3, 0, 10).is_err());
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
