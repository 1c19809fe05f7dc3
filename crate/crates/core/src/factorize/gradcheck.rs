use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{evaluate, TrainingData};
use super::{EmbeddingSet, ModelConfig};
use crate::error::{Error, Result};
use crate::matrices::MatrixBundle;

const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    /// Worst relative error per parameter block.
    pub per_block: Vec<(String, f64)>,
    pub probes: usize,
}

/// Compares analytic gradients with central differences (`h = 1e-5`) at
/// `n_probes` random coordinates of every parameter block.
///
/// The relative error of a probe is `|g_a − g_n| / max(1e-8, |g_a| + |g_n|)`.
pub fn gradient_check(
    model: &EmbeddingSet,
    bundle: &MatrixBundle,
    cfg: &ModelConfig,
    n_probes: usize,
) -> Result<GradientCheck> {
    let cells = bundle.users() * bundle.contexts().max(bundle.words());
    if cells > 10_000 {
        return Err(Error::Config(format!(
            "gradient check is limited to small instances ({cells} cells per matrix)"
        )));
    }
    let data = TrainingData::new(bundle, cfg, None);
    let (_, grad) = evaluate(model, &data, cfg, true)?;
    let grad = grad.expect("gradient requested");
    let grad_blocks: Vec<Vec<f64>> = grad.blocks().iter().map(|b| b.to_vec()).collect();
    let names = model.block_names();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut probe = model.clone();
    let mut per_block = Vec::with_capacity(names.len());
    let mut max_rel_error: f64 = 0.0;
    let mut probes = 0;

    for (b, name) in names.into_iter().enumerate() {
        let len = grad_blocks[b].len();
        let mut worst: f64 = 0.0;
        for _ in 0..n_probes.min(len.max(1)) {
            if len == 0 {
                break;
            }
            let idx = rng.random_range(0..len);
            let original = probe.blocks()[b][idx];
            probe.blocks_mut()[b][idx] = original + STEP;
            let plus = evaluate(&probe, &data, cfg, false)?.0.total;
            probe.blocks_mut()[b][idx] = original - STEP;
            let minus = evaluate(&probe, &data, cfg, false)?.0.total;
            probe.blocks_mut()[b][idx] = original;

            let numeric = (plus - minus) / (2.0 * STEP);
            let analytic = grad_blocks[b][idx];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            probes += 1;
        }
        max_rel_error = max_rel_error.max(worst);
        per_block.push((name, worst));
    }
    Ok(GradientCheck {
        max_rel_error,
        per_block,
        probes,
    })
}
