use serde::{Deserialize, Serialize};

use super::eval::HoldoutMask;
use super::objective::{evaluate, LossBreakdown, TrainingData};
use super::{init_model, EmbeddingSet, ModelConfig};
use crate::error::{Error, Result};
use crate::matrices::MatrixBundle;
use crate::optim::Adam;

const EARLY_STOP_TOLERANCE: f64 = 1e-6;
const EARLY_STOP_PATIENCE: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective at the start of each epoch, before that epoch's update.
    pub trace: Vec<LossBreakdown>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

pub fn train(bundle: &MatrixBundle, cfg: &ModelConfig) -> Result<(EmbeddingSet, TrainReport)> {
    train_with_holdout(bundle, cfg, None)
}

/// Full-batch Adam on the exact gradient. Held-out cells get zero weight.
pub fn train_with_holdout(
    bundle: &MatrixBundle,
    cfg: &ModelConfig,
    holdout: Option<&HoldoutMask>,
) -> Result<(EmbeddingSet, TrainReport)> {
    cfg.validate()?;
    bundle.validate()?;
    let spec = cfg.variant.spec();
    if spec.time_aggregated && bundle.timesteps() != 1 {
        return Err(Error::Config(format!(
            "variant {} expects a time-aggregated bundle (T = 1), got T = {}",
            cfg.variant,
            bundle.timesteps()
        )));
    }

    let mut model = init_model(cfg, bundle.dims(), cfg.seed)?;
    let data = TrainingData::new(bundle, cfg, holdout);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut stalled = 0usize;
    let mut stopped_early = false;
    let factor_blocks = model.factor_block_count();

    for epoch in 0..cfg.epochs {
        let (loss, grad) = evaluate(&model, &data, cfg, true).map_err(|e| Error::Diverged {
            epoch,
            reason: e.to_string(),
        })?;
        let grad = grad.expect("gradient requested");
        if let Some(prev) = trace.last().map(|l: &LossBreakdown| l.total) {
            let rel = (prev - loss.total) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < EARLY_STOP_TOLERANCE {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        trace.push(loss);
        if cfg.early_stopping && stalled >= EARLY_STOP_PATIENCE {
            stopped_early = true;
            break;
        }

        {
            let grads = grad.blocks();
            let mut params = model.blocks_mut();
            adam.step(&mut params, &grads);
            if !cfg.relax_nonneg {
                for block in params.iter_mut().take(factor_blocks) {
                    block.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
        }
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "parameters became non-finite".into(),
            });
        }
    }

    let epochs_run = trace.len();
    Ok((
        model,
        TrainReport {
            trace,
            epochs_run,
            stopped_early,
        },
    ))
}
