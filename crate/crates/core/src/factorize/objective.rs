//! Objective value and analytic gradients.
//!
//! The weighted reconstruction error of a source matrix `X ≈ P = R Qᵀ + b_r 1ᵀ + 1 b_cᵀ`
//! over active rows is split as
//!
//! ```text
//! Σ_ij w_ij (x_ij − p_ij)² = c0 Σ_ij p_ij² + Σ_(i,j) stored [w_ij (x_ij − p_ij)² − c0 p_ij²]
//! ```
//!
//! The dense first sum collapses to Gram-matrix expressions, so one pass costs
//! `O(nnz·k + (m + n)·k²)` instead of touching every cell.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::eval::HoldoutMask;
use super::{EmbeddingSet, Factor, ModelConfig, Source};
use crate::dense::{dot, Matrix};
use crate::error::{Error, Result};
use crate::matrices::{MatrixBundle, SparseMatrix};
use crate::par;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon_a: f64,
    pub recon_c: f64,
    pub l2: f64,
    pub smooth: f64,
    pub total: f64,
}

/// Stored cells of one source matrix at one timestep, as seen by training.
///
/// Rows excluded by masking carry no cells. Held-out cells are stored with
/// weight 0, which removes them from the loss entirely (including the `c0`
/// term for held-out empty cells).
#[derive(Clone, Debug)]
pub(crate) struct SourceData {
    rows: usize,
    cols: usize,
    active: Vec<bool>,
    active_count: usize,
    row_ptr: Vec<usize>,
    entry_row: Vec<u32>,
    entry_col: Vec<u32>,
    values: Vec<f64>,
    weights: Vec<f64>,
    col_ptr: Vec<usize>,
    /// Entry indices ordered by (col, row).
    by_col: Vec<usize>,
}

impl SourceData {
    fn new(m: &SparseMatrix, mask_missing: bool, held: Option<&HashSet<(usize, usize)>>) -> Self {
        let rows = m.rows();
        let cols = m.cols();
        let active: Vec<bool> = (0..rows)
            .map(|i| !mask_missing || m.is_row_active(i))
            .collect();

        let mut held_by_row: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        if let Some(h) = held {
            for &(i, j) in h {
                held_by_row.entry(i).or_default().push(j);
            }
        }

        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut entry_row = Vec::new();
        let mut entry_col = Vec::new();
        let mut values = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for (i, &is_active) in active.iter().enumerate() {
            if is_active {
                let mut cells: BTreeMap<usize, (f64, f64)> =
                    m.row_entries(i).map(|(j, v)| (j, (v, 1.0))).collect();
                if let Some(js) = held_by_row.get(&i) {
                    for &j in js {
                        cells.entry(j).or_insert((0.0, 0.0)).1 = 0.0;
                    }
                }
                for (j, (v, w)) in cells {
                    entry_row.push(i as u32);
                    entry_col.push(j as u32);
                    values.push(v);
                    weights.push(w);
                }
            }
            row_ptr.push(values.len());
        }

        let mut col_ptr = vec![0usize; cols + 1];
        for &j in &entry_col {
            col_ptr[j as usize + 1] += 1;
        }
        for j in 0..cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut fill = col_ptr.clone();
        let mut by_col = vec![0usize; values.len()];
        // Entries are visited in row order, so each column list ends up row-sorted.
        for (e, &j) in entry_col.iter().enumerate() {
            by_col[fill[j as usize]] = e;
            fill[j as usize] += 1;
        }

        let active_count = active.iter().filter(|a| **a).count();
        SourceData {
            rows,
            cols,
            active,
            active_count,
            row_ptr,
            entry_row,
            entry_col,
            values,
            weights,
            col_ptr,
            by_col,
        }
    }
}

/// Training view of a bundle: masking and hold-out applied.
#[derive(Clone, Debug)]
pub struct TrainingData {
    adjacency: Vec<SourceData>,
    content: Vec<SourceData>,
}

impl TrainingData {
    pub fn new(bundle: &MatrixBundle, cfg: &ModelConfig, holdout: Option<&HoldoutMask>) -> Self {
        let held = |source: Source, t: usize| holdout.map(|h| h.cells_for(source, t));
        let adjacency = bundle
            .adjacency
            .iter()
            .enumerate()
            .map(|(t, a)| {
                SourceData::new(a, cfg.mask_missing, held(Source::Adjacency, t).as_ref())
            })
            .collect();
        let content = bundle
            .content
            .iter()
            .enumerate()
            .map(|(t, c)| SourceData::new(c, cfg.mask_missing, held(Source::Content, t).as_ref()))
            .collect();
        TrainingData { adjacency, content }
    }

    pub fn timesteps(&self) -> usize {
        self.content.len()
    }
}

struct SourceGrad {
    rows: Matrix,
    cols: Matrix,
    row_bias: Vec<f64>,
    col_bias: Vec<f64>,
}

struct RowPass {
    loss: f64,
    entry_grads: Vec<f64>,
    row_grad: Vec<f64>,
    row_bias_grad: f64,
}

/// Weighted reconstruction loss of one source matrix, and optionally its
/// gradient with respect to the row factor, column factor and both biases.
fn source_term(
    data: &SourceData,
    r: &Matrix,
    q: &Matrix,
    bias: Option<(&[f64], &[f64])>,
    c0: f64,
    want_grad: bool,
) -> (f64, Option<SourceGrad>) {
    let k = r.cols();
    let n = data.cols;
    let zeros_r;
    let zeros_c;
    let (br, bc): (&[f64], &[f64]) = match bias {
        Some(b) => b,
        None => {
            zeros_r = vec![0.0; data.rows];
            zeros_c = vec![0.0; n];
            (&zeros_r, &zeros_c)
        }
    };

    // Column-side summaries for the dense c0 term.
    let gram_q = q.gram(None);
    let mut sum_q = vec![0.0; k];
    let mut bias_q = vec![0.0; k];
    for j in 0..n {
        let qj = q.row(j);
        for a in 0..k {
            sum_q[a] += qj[a];
            bias_q[a] += bc[j] * qj[a];
        }
    }
    let sum_bc: f64 = bc.iter().sum();
    let sum_bc2: f64 = bc.iter().map(|b| b * b).sum();
    let n_f = n as f64;

    let passes = par::map_indices(data.rows, |i| {
        if !data.active[i] {
            return RowPass {
                loss: 0.0,
                entry_grads: Vec::new(),
                row_grad: Vec::new(),
                row_bias_grad: 0.0,
            };
        }
        let u = r.row(i);
        let bri = br[i];
        let gu = gram_q.mul_vec(u);
        let u_sq = dot(u, &sum_q);
        let dense = dot(u, &gu) + 2.0 * bri * u_sq + 2.0 * dot(u, &bias_q)
            + n_f * bri * bri
            + 2.0 * bri * sum_bc
            + sum_bc2;
        let mut loss = c0 * dense;

        let range = data.row_ptr[i]..data.row_ptr[i + 1];
        let mut entry_grads = Vec::with_capacity(range.len());
        let mut row_grad = if want_grad {
            (0..k)
                .map(|a| 2.0 * c0 * (gu[a] + bri * sum_q[a] + bias_q[a]))
                .collect()
        } else {
            Vec::new()
        };
        let mut row_bias_grad = 2.0 * c0 * (u_sq + n_f * bri + sum_bc);
        for e in range {
            let j = data.entry_col[e] as usize;
            let qj = q.row(j);
            let p = dot(u, qj) + bri + bc[j];
            let x = data.values[e];
            let w = data.weights[e];
            let res = x - p;
            loss += w * res * res - c0 * p * p;
            let g = -2.0 * w * res - 2.0 * c0 * p;
            if want_grad {
                for (ga, qa) in row_grad.iter_mut().zip(qj) {
                    *ga += g * qa;
                }
                row_bias_grad += g;
                entry_grads.push(g);
            }
        }
        RowPass {
            loss,
            entry_grads,
            row_grad,
            row_bias_grad,
        }
    });

    let total: f64 = passes.iter().map(|p| p.loss).sum();
    if !want_grad {
        return (total, None);
    }

    let mut grad_r = Matrix::zeros(data.rows, k);
    let mut grad_br = vec![0.0; data.rows];
    let mut entry_grads = Vec::with_capacity(data.values.len());
    for (i, p) in passes.into_iter().enumerate() {
        if data.active[i] {
            grad_r.row_mut(i).copy_from_slice(&p.row_grad);
            grad_br[i] = p.row_bias_grad;
        }
        entry_grads.extend(p.entry_grads);
    }

    // Row-side summaries over active rows.
    let gram_r = r.gram(Some(&data.active));
    let mut sum_r = vec![0.0; k];
    let mut bias_r = vec![0.0; k];
    let mut sum_br = 0.0;
    for i in (0..data.rows).filter(|&i| data.active[i]) {
        let ri = r.row(i);
        for a in 0..k {
            sum_r[a] += ri[a];
            bias_r[a] += br[i] * ri[a];
        }
        sum_br += br[i];
    }
    let m_act = data.active_count as f64;

    let col_results = par::map_indices(n, |j| {
        let qj = q.row(j);
        let hq = gram_r.mul_vec(qj);
        let mut gq: Vec<f64> = (0..k)
            .map(|a| 2.0 * c0 * (hq[a] + bias_r[a] + bc[j] * sum_r[a]))
            .collect();
        let mut gbc = 2.0 * c0 * (dot(qj, &sum_r) + sum_br + m_act * bc[j]);
        for &e in &data.by_col[data.col_ptr[j]..data.col_ptr[j + 1]] {
            let g = entry_grads[e];
            let ri = r.row(data.entry_row[e] as usize);
            for (ga, ra) in gq.iter_mut().zip(ri) {
                *ga += g * ra;
            }
            gbc += g;
        }
        (gq, gbc)
    });
    let mut grad_q = Matrix::zeros(n, k);
    let mut grad_bc = vec![0.0; n];
    for (j, (gq, gbc)) in col_results.into_iter().enumerate() {
        grad_q.row_mut(j).copy_from_slice(&gq);
        grad_bc[j] = gbc;
    }

    (
        total,
        Some(SourceGrad {
            rows: grad_r,
            cols: grad_q,
            row_bias: grad_br,
            col_bias: grad_bc,
        }),
    )
}

fn check_dims(model: &EmbeddingSet, data: &TrainingData) -> Result<()> {
    if model.timesteps != data.timesteps() {
        return Err(Error::Dimension(format!(
            "model has {} timesteps, data has {}",
            model.timesteps,
            data.timesteps()
        )));
    }
    let c = &data.content[0];
    if model.users() != c.rows || model.words() != c.cols {
        return Err(Error::Dimension(format!(
            "model is {}x{} over content, data is {}x{}",
            model.users(),
            model.words(),
            c.rows,
            c.cols
        )));
    }
    if model.variant.spec().uses_adjacency {
        let a = &data.adjacency[0];
        if model.contexts() != a.cols || a.rows != c.rows {
            return Err(Error::Dimension(format!(
                "model has {} context users, data has {}",
                model.contexts(),
                a.cols
            )));
        }
    }
    Ok(())
}

fn finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(term.to_string()))
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn evaluate(
    model: &EmbeddingSet,
    data: &TrainingData,
    cfg: &ModelConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<EmbeddingSet>)> {
    check_dims(model, data)?;
    let spec = model.variant.spec();
    let c0 = cfg.c0;
    let mut grad = want_grad.then(|| model.zeros_like());
    let mut recon_a = 0.0;
    let mut recon_c = 0.0;

    for t in 0..model.timesteps {
        let u = model.user.at(t);
        if spec.uses_adjacency {
            let v = model
                .context
                .as_ref()
                .ok_or_else(|| Error::Dimension("adjacency variant without context factor".into()))?
                .at(t);
            let bias = model
                .adjacency_bias
                .as_ref()
                .map(|b| (b.row[t].as_slice(), b.col[t].as_slice()));
            let (l, g) = source_term(&data.adjacency[t], u, v, bias, c0, want_grad);
            recon_a += l;
            if let (Some(grad), Some(g)) = (grad.as_mut(), g) {
                grad.user.at_mut(t).add_scaled(1.0, &g.rows);
                grad.context
                    .as_mut()
                    .expect("context grad")
                    .at_mut(t)
                    .add_scaled(1.0, &g.cols);
                if let Some(b) = grad.adjacency_bias.as_mut() {
                    add_into(&mut b.row[t], &g.row_bias);
                    add_into(&mut b.col[t], &g.col_bias);
                }
            }
        }

        let w = model.word.at(t);
        let bias = model
            .content_bias
            .as_ref()
            .map(|b| (b.row[t].as_slice(), b.col[t].as_slice()));
        let (l, g) = source_term(&data.content[t], u, w, bias, c0, want_grad);
        recon_c += l;
        if let (Some(grad), Some(g)) = (grad.as_mut(), g) {
            grad.user.at_mut(t).add_scaled(1.0, &g.rows);
            grad.word.at_mut(t).add_scaled(1.0, &g.cols);
            if let Some(b) = grad.content_bias.as_mut() {
                add_into(&mut b.row[t], &g.row_bias);
                add_into(&mut b.col[t], &g.col_bias);
            }
        }
    }
    // The split form can round slightly below zero at a perfect fit.
    let recon_a = finite(recon_a, "recon_A")?.max(0.0);
    let recon_c = finite(recon_c, "recon_C")?.max(0.0);

    let factors: Vec<(&Factor, usize)> = {
        let mut f = vec![(&model.user, 0usize)];
        if let Some(c) = &model.context {
            f.push((c, 1));
        }
        f.push((&model.word, 2));
        f
    };

    let mut l2 = 0.0;
    let mut smooth = 0.0;
    for (factor, _) in &factors {
        for m in factor.matrices() {
            l2 += m.frobenius_sq();
        }
        if let Factor::Dynamic(ms) = factor {
            for pair in ms.windows(2) {
                smooth += pair[1].distance_sq(&pair[0]);
            }
        }
    }
    let l2 = finite(cfg.lambda1 * l2, "l2")?;
    let smooth = finite(cfg.lambda2 * smooth, "smooth")?;

    if let Some(grad) = grad.as_mut() {
        for (factor, which) in &factors {
            let grad_factor = match which {
                0 => &mut grad.user,
                1 => grad.context.as_mut().expect("context grad"),
                _ => &mut grad.word,
            };
            for (gm, m) in grad_factor.matrices_mut().iter_mut().zip(factor.matrices()) {
                gm.add_scaled(2.0 * cfg.lambda1, m);
            }
            if let (Factor::Dynamic(ms), Factor::Dynamic(gms)) = (factor, grad_factor) {
                let last = ms.len() - 1;
                for t in 0..ms.len() {
                    let g = &mut gms[t];
                    if t > 0 {
                        g.add_scaled(2.0 * cfg.lambda2, &ms[t]);
                        g.add_scaled(-2.0 * cfg.lambda2, &ms[t - 1]);
                    }
                    if t < last {
                        g.add_scaled(2.0 * cfg.lambda2, &ms[t]);
                        g.add_scaled(-2.0 * cfg.lambda2, &ms[t + 1]);
                    }
                }
            }
        }
    }

    let total = finite(recon_a + recon_c + l2 + smooth, "total")?;
    Ok((
        LossBreakdown {
            recon_a,
            recon_c,
            l2,
            smooth,
            total,
        },
        grad,
    ))
}

/// Objective value on the full bundle (masking per `cfg`, no hold-out).
pub fn loss(model: &EmbeddingSet, bundle: &MatrixBundle, cfg: &ModelConfig) -> Result<LossBreakdown> {
    let data = TrainingData::new(bundle, cfg, None);
    Ok(evaluate(model, &data, cfg, false)?.0)
}

/// Objective value and its gradient, shaped like the model.
pub fn loss_and_gradient(
    model: &EmbeddingSet,
    data: &TrainingData,
    cfg: &ModelConfig,
) -> Result<(LossBreakdown, EmbeddingSet)> {
    let (l, g) = evaluate(model, data, cfg, true)?;
    Ok((l, g.expect("gradient requested")))
}
