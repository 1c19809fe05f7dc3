//! Reconstruction, hold-out masks and the NZ-MAE / 0-MAE / WMAE metrics.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, Source};
use crate::dense::{dot, Matrix};
use crate::error::{Error, Result};
use crate::matrices::{MatrixBundle, SparseMatrix};

/// Dense reconstruction of one source matrix at timestep `t` (0-based).
pub fn reconstruct(model: &EmbeddingSet, t: usize, which: Source) -> Result<Matrix> {
    if t >= model.timesteps {
        return Err(Error::Dimension(format!(
            "timestep {t} out of range (model has {})",
            model.timesteps
        )));
    }
    let u = model.user.at(t);
    let (q, bias) = match which {
        Source::Adjacency => {
            let v = model.context.as_ref().ok_or_else(|| {
                Error::Unsupported(format!(
                    "variant {} has no adjacency factorization",
                    model.variant
                ))
            })?;
            (v.at(t), model.adjacency_bias.as_ref())
        }
        Source::Content => (model.word.at(t), model.content_bias.as_ref()),
    };
    let mut out = Matrix::zeros(u.rows(), q.rows());
    for i in 0..u.rows() {
        let ui = u.row(i);
        let row = out.row_mut(i);
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = dot(ui, q.row(j));
            if let Some(b) = bias {
                *cell += b.row[t][i] + b.col[t][j];
            }
        }
    }
    Ok(out)
}

fn predict_cell(model: &EmbeddingSet, source: Source, t: usize, i: usize, j: usize) -> Option<f64> {
    let u = model.user.at(t).row(i);
    let (q, bias) = match source {
        Source::Adjacency => (model.context.as_ref()?.at(t), model.adjacency_bias.as_ref()),
        Source::Content => (model.word.at(t), model.content_bias.as_ref()),
    };
    let mut p = dot(u, q.row(j));
    if let Some(b) = bias {
        p += b.row[t][i] + b.col[t][j];
    }
    Some(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeldOutCell {
    pub source: Source,
    pub t: usize,
    pub row: usize,
    pub col: usize,
}

/// Cells withheld from training and used for evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HoldoutMask {
    pub cells: Vec<HeldOutCell>,
}

impl HoldoutMask {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub(crate) fn cells_for(&self, source: Source, t: usize) -> HashSet<(usize, usize)> {
        self.cells
            .iter()
            .filter(|c| c.source == source && c.t == t)
            .map(|c| (c.row, c.col))
            .collect()
    }
}

/// For every active row holding at least two observed cells, withholds
/// `max(1, round(fraction · nnz))` observed cells and the same number of
/// empty cells, chosen uniformly at random.
pub fn make_holdout(bundle: &MatrixBundle, fraction: f64, seed: u64) -> Result<HoldoutMask> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config("hold-out fraction must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    if fraction == 0.0 {
        return Ok(HoldoutMask { cells });
    }
    for (source, mats) in [
        (Source::Adjacency, &bundle.adjacency),
        (Source::Content, &bundle.content),
    ] {
        for (t, m) in mats.iter().enumerate() {
            holdout_matrix(m, source, t, fraction, &mut rng, &mut cells);
        }
    }
    Ok(HoldoutMask { cells })
}

fn holdout_matrix(
    m: &SparseMatrix,
    source: Source,
    t: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<HeldOutCell>,
) {
    for i in 0..m.rows() {
        let nnz = m.row_nnz(i);
        if !m.is_row_active(i) || nnz < 2 {
            continue;
        }
        let take = ((nnz as f64 * fraction).round() as usize).max(1).min(nnz - 1);
        let cols: Vec<usize> = m.row_entries(i).map(|(j, _)| j).collect();
        let mut chosen = BTreeSet::new();
        while chosen.len() < take {
            chosen.insert(cols[rng.random_range(0..cols.len())]);
        }
        let zeros = m.cols() - nnz;
        let observed: HashSet<usize> = cols.iter().copied().collect();
        let mut zero_chosen = BTreeSet::new();
        while zero_chosen.len() < take.min(zeros) {
            let j = rng.random_range(0..m.cols());
            if !observed.contains(&j) {
                zero_chosen.insert(j);
            }
        }
        out.extend(chosen.into_iter().chain(zero_chosen).map(|col| HeldOutCell {
            source,
            t,
            row: i,
            col,
        }));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    /// MAE over nonzero cells.
    pub nz_mae: f64,
    /// MAE over empty cells.
    pub zero_mae: f64,
    /// `(Σ|e_nz| + c0·Σ|e_0|) / (N_nz + c0·N_0)`.
    pub wmae: f64,
    pub n_nonzero: usize,
    pub n_zero: usize,
}

pub fn reconstruction_metrics(nz_errors: &[f64], zero_errors: &[f64], c0: f64) -> Result<ReconMetrics> {
    if nz_errors.is_empty() && zero_errors.is_empty() {
        return Err(Error::Empty("no cells to evaluate".into()));
    }
    let nz_sum: f64 = nz_errors.iter().map(|e| e.abs()).sum();
    let zero_sum: f64 = zero_errors.iter().map(|e| e.abs()).sum();
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let denom = nz_errors.len() as f64 + c0 * zero_errors.len() as f64;
    let wmae = if denom > 0.0 {
        (nz_sum + c0 * zero_sum) / denom
    } else {
        0.0
    };
    Ok(ReconMetrics {
        nz_mae: mean(nz_sum, nz_errors.len()),
        zero_mae: mean(zero_sum, zero_errors.len()),
        wmae,
        n_nonzero: nz_errors.len(),
        n_zero: zero_errors.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub adjacency: Option<ReconMetrics>,
    pub content: Option<ReconMetrics>,
}

/// Metrics over the held-out cells, per source matrix the model reconstructs.
pub fn eval_reconstruction(
    model: &EmbeddingSet,
    bundle: &MatrixBundle,
    holdout: &HoldoutMask,
    c0: f64,
) -> Result<ReconReport> {
    if holdout.is_empty() {
        return Err(Error::Empty("hold-out mask is empty".into()));
    }
    let mut errors = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for cell in &holdout.cells {
        if cell.t >= model.timesteps {
            return Err(Error::Dimension(format!("held-out timestep {} out of range", cell.t)));
        }
        let Some(p) = predict_cell(model, cell.source, cell.t, cell.row, cell.col) else {
            continue;
        };
        let truth = match cell.source {
            Source::Adjacency => bundle.adjacency[cell.t].get(cell.row, cell.col),
            Source::Content => bundle.content[cell.t].get(cell.row, cell.col),
        };
        let slot = &mut errors[cell.source as usize];
        if truth != 0.0 {
            slot.0.push(truth - p);
        } else {
            slot.1.push(p);
        }
    }
    let metrics = |(nz, z): &(Vec<f64>, Vec<f64>)| {
        if nz.is_empty() && z.is_empty() {
            Ok(None)
        } else {
            reconstruction_metrics(nz, z, c0).map(Some)
        }
    };
    let report = ReconReport {
        adjacency: metrics(&errors[0])?,
        content: metrics(&errors[1])?,
    };
    if report.adjacency.is_none() && report.content.is_none() {
        return Err(Error::Empty("no held-out cell is reconstructed by this model".into()));
    }
    Ok(report)
}

/// Metrics over every cell of every active row (in-sample fit).
pub fn in_sample_metrics(model: &EmbeddingSet, bundle: &MatrixBundle, c0: f64) -> Result<ReconReport> {
    let per_source = |source: Source, mats: &[SparseMatrix]| -> Result<Option<ReconMetrics>> {
        if source == Source::Adjacency && model.context.is_none() {
            return Ok(None);
        }
        let mut nz = Vec::new();
        let mut zero = Vec::new();
        for (t, m) in mats.iter().enumerate() {
            let rec = reconstruct(model, t, source)?;
            for i in (0..m.rows()).filter(|&i| m.is_row_active(i)) {
                let mut entries = m.row_entries(i).peekable();
                for (j, &p) in rec.row(i).iter().enumerate() {
                    match entries.peek() {
                        Some(&(c, v)) if c == j => {
                            nz.push(v - p);
                            entries.next();
                        }
                        _ => zero.push(p),
                    }
                }
            }
        }
        if nz.is_empty() && zero.is_empty() {
            return Ok(None);
        }
        reconstruction_metrics(&nz, &zero, c0).map(Some)
    };
    Ok(ReconReport {
        adjacency: per_source(Source::Adjacency, &bundle.adjacency)?,
        content: per_source(Source::Content, &bundle.content)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_zero() {
        let m = reconstruction_metrics(&[0.0, 0.0], &[0.0; 5], 0.01).unwrap();
        assert_eq!((m.nz_mae, m.zero_mae, m.wmae), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unit_c0_is_pooled_mae() {
        let nz = [0.3, -1.2, 0.05];
        let zero = [0.1, 0.2, -0.7, 0.0];
        let m = reconstruction_metrics(&nz, &zero, 1.0).unwrap();
        let pooled = nz.iter().chain(&zero).map(|e| e.abs()).sum::<f64>() / 7.0;
        assert!((m.wmae - pooled).abs() < 1e-12);
    }

    #[test]
    fn weighted_mae_hand_value() {
        let m = reconstruction_metrics(&[1.0, 1.0], &[0.5; 4], 0.01).unwrap();
        let expected = (2.0 + 0.01 * 2.0) / (2.0 + 0.04);
        assert!((m.wmae - expected).abs() < 1e-15);
        assert!((m.wmae - 0.9902).abs() < 1e-4);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(reconstruction_metrics(&[], &[], 0.01).is_err());
    }
}
