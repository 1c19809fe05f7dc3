use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcordanceMode {
    /// CI over each user's communities, averaged over users.
    WithinSample,
    /// CI over users for each community, averaged over communities.
    PerClass,
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's concordance index in O(n log n). Pairs tied in truth are
/// skipped; pairs tied in prediction count one half. `None` when no pair is
/// comparable.
pub fn concordance_index(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension("prediction and truth lengths differ".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("concordance input".into()));
    }
    let n = pred.len();
    let mut sorted_pred: Vec<f64> = pred.to_vec();
    sorted_pred.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted_pred.dedup();
    let rank = |v: f64| sorted_pred.partition_point(|x| *x < v);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| truth[a].partial_cmp(&truth[b]).unwrap_or(Ordering::Equal));
    let mut tree = Fenwick(vec![0; sorted_pred.len() + 1]);
    let (mut concordant, mut tied, mut comparable) = (0u64, 0u64, 0u64);
    let mut inserted = 0u64;
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end < n && truth[order[end]] == truth[order[start]] {
            end += 1;
        }
        for &j in &order[start..end] {
            let r = rank(pred[j]);
            let below = tree.prefix(r);
            let equal = tree.prefix(r + 1) - below;
            concordant += below;
            tied += equal;
            comparable += inserted;
        }
        for &j in &order[start..end] {
            tree.add(rank(pred[j]));
        }
        inserted += (end - start) as u64;
        start = end;
    }
    if comparable == 0 {
        return Ok(None);
    }
    Ok(Some((concordant as f64 + 0.5 * tied as f64) / comparable as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub mode: ConcordanceMode,
    pub mean: f64,
    /// Per-user or per-community CI; `None` where no pair was comparable.
    pub per_item: Vec<Option<f64>>,
}

/// CI over a users × communities grid of predictions and truths.
pub fn concordance(y_hat: &[Vec<f64>], y_true: &[Vec<f64>], mode: ConcordanceMode) -> Result<ConcordanceReport> {
    if y_hat.len() != y_true.len() || y_hat.iter().zip(y_true).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::Dimension("prediction and truth grids differ in shape".into()));
    }
    let per_item = match mode {
        ConcordanceMode::WithinSample => y_hat
            .iter()
            .zip(y_true)
            .map(|(p, t)| concordance_index(p, t))
            .collect::<Result<Vec<_>>>()?,
        ConcordanceMode::PerClass => {
            let classes = y_hat.first().map_or(0, |r| r.len());
            (0..classes)
                .map(|c| {
                    let p: Vec<f64> = y_hat.iter().map(|r| r[c]).collect();
                    let t: Vec<f64> = y_true.iter().map(|r| r[c]).collect();
                    concordance_index(&p, &t)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let scored: Vec<f64> = per_item.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::Empty("no comparable pairs".into()));
    }
    Ok(ConcordanceReport {
        mode,
        mean: scored.iter().sum::<f64>() / scored.len() as f64,
        per_item,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let ci = concordance_index(&[0.2, 0.1, 0.8], &[0.1, 0.5, 0.9]).unwrap().unwrap();
        assert_eq!(ci, 2.0 / 3.0);
    }

    #[test]
    fn ordering_extremes_and_ties() {
        let t = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(concordance_index(&t, &t).unwrap(), Some(1.0));
        let rev: Vec<f64> = t.iter().map(|v| -v).collect();
        assert_eq!(concordance_index(&rev, &t).unwrap(), Some(0.0));
        assert_eq!(concordance_index(&[0.0; 4], &t).unwrap(), Some(0.5));
        assert_eq!(concordance_index(&t, &[1.0; 4]).unwrap(), None);
    }

    #[test]
    fn modes_average_over_rows_or_columns() {
        let y_hat = vec![vec![0.1, 0.9], vec![0.8, 0.2]];
        let y_true = vec![vec![0.0, 1.0], vec![0.0, 1.0]];
        let within = concordance(&y_hat, &y_true, ConcordanceMode::WithinSample).unwrap();
        assert_eq!(within.per_item, vec![Some(1.0), Some(0.0)]);
        assert_eq!(within.mean, 0.5);
        assert!(concordance(&y_hat, &y_true, ConcordanceMode::PerClass).is_err());
    }
}
