//! One LSTM layer followed by ReLU dense layers and a linear head, trained
//! with backpropagation through time. The head predicts the change from the
//! last observed embedding.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SequenceSample;
use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::par;

/// Samples per gradient chunk; chunk gradients are summed in order.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input: usize,
    pub hidden: usize,
    pub dense: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecurrentNet {
    shape: NetShape,
    /// `[W_x, W_h, b, (W_l, b_l) per dense layer, W_out, b_out]`, row-major.
    params: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub validation_mse: Vec<f64>,
    pub best_validation: f64,
    pub best_epoch: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out = W x` with `W` of shape `out.len() × x.len()`.
fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o = row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    matvec(w, x, out);
    out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
}

/// `gw += d ⊗ x`, `gx += Wᵀ d`.
fn affine_back(w: &[f64], x: &[f64], d: &[f64], gw: &mut [f64], gx: Option<&mut [f64]>) {
    let n = x.len();
    for (di, row) in d.iter().zip(gw.chunks_exact_mut(n)) {
        if *di != 0.0 {
            for (g, v) in row.iter_mut().zip(x) {
                *g += di * v;
            }
        }
    }
    if let Some(gx) = gx {
        for (di, row) in d.iter().zip(w.chunks_exact(n)) {
            if *di != 0.0 {
                for (g, a) in gx.iter_mut().zip(row) {
                    *g += di * a;
                }
            }
        }
    }
}

struct StepCache {
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

struct Masks {
    layers: Vec<Vec<f64>>,
}

impl RecurrentNet {
    pub fn new(shape: NetShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (shape.input, shape.hidden);
        let mut glorot = |rows: usize, cols: usize| -> Vec<f64> {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect()
        };
        let mut params = vec![glorot(4 * h, d), glorot(4 * h, h)];
        let mut bias = vec![0.0; 4 * h];
        bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
        params.push(bias);
        let mut prev = h;
        for &width in &shape.dense {
            params.push(glorot(width, prev));
            params.push(vec![0.0; width]);
            prev = width;
        }
        params.push(glorot(d, prev));
        params.push(vec![0.0; d]);
        RecurrentNet { shape, params }
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.params
    }

    fn layer_widths(&self) -> Vec<usize> {
        let mut w = vec![self.shape.hidden];
        w.extend(&self.shape.dense);
        w
    }

    fn draw_masks(&self, p: f64, rng: &mut ChaCha8Rng) -> Masks {
        let keep = 1.0 - p;
        Masks {
            layers: self
                .layer_widths()
                .into_iter()
                .map(|w| {
                    (0..w)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn predict(&self, history: &[Vec<f64>]) -> Vec<f64> {
        self.forward(history, None).0
    }

    /// Returns the prediction plus what backpropagation needs.
    #[allow(clippy::type_complexity)]
    fn forward(&self, xs: &[Vec<f64>], masks: Option<&Masks>) -> (Vec<f64>, Vec<StepCache>, Vec<Vec<f64>>) {
        let h = self.shape.hidden;
        let (wx, wh, bl) = (&self.params[0], &self.params[1], &self.params[2]);
        let mut steps: Vec<StepCache> = Vec::with_capacity(xs.len());
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut a = vec![0.0; 4 * h];
        let mut tmp = vec![0.0; 4 * h];
        for x in xs {
            affine(wx, bl, x, &mut a);
            matvec(wh, &h_prev, &mut tmp);
            let mut gates = vec![0.0; 4 * h];
            for r in 0..4 * h {
                let v = a[r] + tmp[r];
                gates[r] = if (2 * h..3 * h).contains(&r) { v.tanh() } else { sigmoid(v) };
            }
            let mut c = vec![0.0; h];
            let mut hn = vec![0.0; h];
            for j in 0..h {
                c[j] = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
                hn[j] = gates[3 * h + j] * c[j].tanh();
            }
            h_prev = hn.clone();
            c_prev = c.clone();
            steps.push(StepCache { gates, c, h: hn });
        }

        // Activations entering each dense layer and the head, post-dropout.
        let mut acts: Vec<Vec<f64>> = Vec::new();
        let mut z = h_prev;
        let apply = |z: &mut Vec<f64>, layer: usize| {
            if let Some(m) = masks {
                z.iter_mut().zip(&m.layers[layer]).for_each(|(v, k)| *v *= k);
            }
        };
        apply(&mut z, 0);
        acts.push(z.clone());
        let base = 3;
        for (l, &width) in self.shape.dense.iter().enumerate() {
            let mut out = vec![0.0; width];
            affine(&self.params[base + 2 * l], &self.params[base + 2 * l + 1], &z, &mut out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            apply(&mut out, l + 1);
            acts.push(out.clone());
            z = out;
        }
        let head = base + 2 * self.shape.dense.len();
        let mut y = vec![0.0; self.shape.input];
        affine(&self.params[head], &self.params[head + 1], &z, &mut y);
        let last = xs.last().expect("nonempty history");
        y.iter_mut().zip(last).for_each(|(v, x)| *v += x);
        (y, steps, acts)
    }

    /// Adds the gradient of `scale · mean_k (y − target)²` to `grad`; returns
    /// the unscaled sample loss.
    fn backward(&self, sample: &SequenceSample, masks: Option<&Masks>, scale: f64, grad: &mut [Vec<f64>]) -> f64 {
        let xs = &sample.history;
        let (y, steps, acts) = self.forward(xs, masks);
        let k = y.len() as f64;
        let loss = y.iter().zip(&sample.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k;
        let dy: Vec<f64> = y
            .iter()
            .zip(&sample.target)
            .map(|(a, b)| scale * 2.0 * (a - b) / k)
            .collect();

        let base = 3;
        let n_dense = self.shape.dense.len();
        let head = base + 2 * n_dense;
        let mut dz = vec![0.0; acts[n_dense].len()];
        {
            let (before, after) = grad.split_at_mut(head + 1);
            affine_back(&self.params[head], &acts[n_dense], &dy, &mut before[head], Some(&mut dz));
            after[0].iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
        }
        for l in (0..n_dense).rev() {
            // acts[l + 1] = mask ⊙ relu(pre); its gradient passes where it is nonzero.
            let out = &acts[l + 1];
            let mut dpre: Vec<f64> = dz
                .iter()
                .zip(out)
                .map(|(d, o)| if *o > 0.0 { *d } else { 0.0 })
                .collect();
            if let Some(m) = masks {
                dpre.iter_mut().zip(&m.layers[l + 1]).for_each(|(d, k)| *d *= k);
            }
            let mut dprev = vec![0.0; acts[l].len()];
            let wi = base + 2 * l;
            {
                let (before, after) = grad.split_at_mut(wi + 1);
                affine_back(&self.params[wi], &acts[l], &dpre, &mut before[wi], Some(&mut dprev));
                after[0].iter_mut().zip(&dpre).for_each(|(g, d)| *g += d);
            }
            dz = dprev;
        }
        if let Some(m) = masks {
            dz.iter_mut().zip(&m.layers[0]).for_each(|(d, k)| *d *= k);
        }

        let h = self.shape.hidden;
        let mut dh = dz;
        let mut dc = vec![0.0; h];
        let zeros = vec![0.0; h];
        for s in (0..steps.len()).rev() {
            let st = &steps[s];
            let c_prev = if s > 0 { &steps[s - 1].c } else { &zeros };
            let h_prev = if s > 0 { &steps[s - 1].h } else { &zeros };
            let g = &st.gates;
            let mut da = vec![0.0; 4 * h];
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = st.c[j].tanh();
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                da[j] = dcj * gg * i * (1.0 - i);
                da[h + j] = dcj * c_prev[j] * f * (1.0 - f);
                da[2 * h + j] = dcj * i * (1.0 - gg * gg);
                da[3 * h + j] = d_o * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            let mut dh_prev = vec![0.0; h];
            let (g0, rest) = grad.split_at_mut(1);
            let (g1, rest) = rest.split_at_mut(1);
            affine_back(&self.params[0], &xs[s], &da, &mut g0[0], None);
            affine_back(&self.params[1], h_prev, &da, &mut g1[0], Some(&mut dh_prev));
            rest[0].iter_mut().zip(&da).for_each(|(gb, d)| *gb += d);
            dh = dh_prev;
        }
        loss
    }

    fn zero_grad(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn batch_gradient(&self, batch: &[&SequenceSample], masks: Option<&[Masks]>) -> (f64, Vec<Vec<f64>>) {
        let scale = 1.0 / batch.len() as f64;
        let chunks: Vec<usize> = (0..batch.len().div_ceil(CHUNK)).collect();
        let parts = par::map_slice(&chunks, |&c| {
            let mut g = self.zero_grad();
            let mut loss = 0.0;
            for idx in c * CHUNK..((c + 1) * CHUNK).min(batch.len()) {
                let m = masks.map(|m| &m[idx]);
                loss += self.backward(batch[idx], m, scale, &mut g);
            }
            (loss, g)
        });
        let mut total = self.zero_grad();
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (t, p) in total.iter_mut().zip(&g) {
                t.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
        }
        (loss * scale, total)
    }

    /// Mean squared error over `samples` and its gradient, without dropout.
    pub fn loss_and_gradient(&self, samples: &[SequenceSample]) -> (f64, Vec<Vec<f64>>) {
        let refs: Vec<&SequenceSample> = samples.iter().collect();
        self.batch_gradient(&refs, None)
    }

    pub fn mse(&self, samples: &[SequenceSample]) -> f64 {
        let errs = par::map_slice(samples, |s| {
            let y = self.predict(&s.history);
            y.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
        });
        errs.iter().sum::<f64>() / errs.len().max(1) as f64
    }

    /// Mini-batch Adam on MSE with inverted dropout `p`. Keeps the parameters
    /// of the epoch with the lowest validation MSE.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        &mut self,
        train: &[SequenceSample],
        validation: &[SequenceSample],
        learning_rate: f64,
        dropout: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<TrainTrace> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f0ec);
        let mut adam = Adam::new(learning_rate);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best = (self.mse(validation), self.params.clone(), 0);
        let mut trace = TrainTrace {
            train_loss: Vec::with_capacity(epochs),
            validation_mse: Vec::with_capacity(epochs),
            best_validation: best.0,
            best_epoch: 0,
        };
        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch_idx in order.chunks(batch_size) {
                let batch: Vec<&SequenceSample> = batch_idx.iter().map(|&i| &train[i]).collect();
                let masks: Vec<Masks> = batch.iter().map(|_| self.draw_masks(dropout, &mut rng)).collect();
                let (loss, grad) = self.batch_gradient(&batch, Some(&masks));
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        reason: "forecaster loss became non-finite".into(),
                    });
                }
                epoch_loss += loss * batch.len() as f64;
                let grads: Vec<&[f64]> = grad.iter().map(|g| g.as_slice()).collect();
                let mut params: Vec<&mut [f64]> = self.params.iter_mut().map(|p| p.as_mut_slice()).collect();
                adam.step(&mut params, &grads);
            }
            let val = self.mse(validation);
            if !val.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "validation error became non-finite".into(),
                });
            }
            trace.train_loss.push(epoch_loss / train.len() as f64);
            trace.validation_mse.push(val);
            if val < best.0 {
                best = (val, self.params.clone(), epoch);
            }
        }
        self.params = best.1;
        trace.best_validation = best.0;
        trace.best_epoch = best.2;
        Ok(trace)
    }
}
