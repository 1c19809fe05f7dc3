//! Forecasting user embeddings from their history, community affinity
//! prediction, and concordance scoring.

mod affinity;
mod concordance;
mod linear;
mod recurrent;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::cosine;
use crate::error::{Error, Result};
use crate::factorize::EmbeddingSet;
use crate::par;

pub use affinity::{
    community_centroids, engagement_targets, interactions_from_buckets, predict_affinity,
    AffinityPrediction, CommunityCentroids, Interaction,
};
pub use concordance::{
    concordance, concordance_index, ConcordanceMode, ConcordanceReport,
};
pub use linear::LinearAr;
pub use recurrent::{NetShape, RecurrentNet, TrainTrace};

/// Predict `target` (the embedding at timestep `t`) from `history`
/// (embeddings at `0..t`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub user_id: String,
    pub t: usize,
    pub history: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

/// Percentages of users assigned to each split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train: u32,
    pub test: u32,
    pub validation: u32,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 75,
            test: 15,
            validation: 10,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train + self.test + self.validation != 100 {
            return Err(Error::Config("split percentages must sum to 100".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceSplits {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub validation: Vec<SequenceSample>,
}

/// Builds one sample per user and target timestep `t ∈ 1..T`, then splits
/// users (not samples) by a seeded shuffle.
pub fn make_sequences(
    model: &EmbeddingSet,
    roster: &[String],
    split: SplitConfig,
    seed: u64,
) -> Result<SequenceSplits> {
    split.validate()?;
    if model.timesteps < 2 {
        return Err(Error::Config(format!(
            "forecasting needs at least 2 timesteps, model has {}",
            model.timesteps
        )));
    }
    if roster.len() != model.users() {
        return Err(Error::Dimension("roster does not match model users".into()));
    }
    let n = roster.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * split.train as usize / 100;
    let n_test = n * split.test as usize / 100;

    let samples_for = |i: usize| -> Vec<SequenceSample> {
        let history = model.user_history(i);
        (1..model.timesteps)
            .map(|t| SequenceSample {
                user_id: roster[i].clone(),
                t,
                history: history[..t].to_vec(),
                target: history[t].clone(),
            })
            .collect()
    };
    let mut out = SequenceSplits::default();
    for (rank, &i) in order.iter().enumerate() {
        let bucket = if rank < n_train {
            &mut out.train
        } else if rank < n_train + n_test {
            &mut out.test
        } else {
            &mut out.validation
        };
        bucket.extend(samples_for(i));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    Recurrent,
    LinearAr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub kind: ForecasterKind,
    pub hidden: usize,
    pub dense: Vec<usize>,
    /// Dropout grid.
    pub dropout: Vec<f64>,
    /// Learning-rate grid.
    pub learning_rate: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub split: SplitConfig,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        ForecasterConfig {
            kind: ForecasterKind::Recurrent,
            hidden: 256,
            dense: vec![512, 256],
            dropout: vec![0.1, 0.2, 0.5],
            learning_rate: vec![0.001, 0.01, 0.1],
            epochs: 30,
            batch_size: 32,
            seed: 0,
            split: SplitConfig::default(),
        }
    }
}

impl ForecasterConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.kind == ForecasterKind::Recurrent {
            if self.hidden == 0 || self.dense.contains(&0) {
                return Err(Error::Config("layer sizes must be >= 1".into()));
            }
            if self.dropout.is_empty() || self.learning_rate.is_empty() {
                return Err(Error::Config("hyperparameter grids must be nonempty".into()));
            }
            if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
                return Err(Error::Config("dropout must lie in [0, 1)".into()));
            }
            if self.learning_rate.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::Config("learning rates must be positive".into()));
            }
            if self.epochs == 0 || self.batch_size == 0 {
                return Err(Error::Config("epochs and batch_size must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Result of one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub learning_rate: f64,
    pub dropout: f64,
    /// Best validation MSE, `None` if training diverged.
    pub validation_mse: Option<f64>,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Forecaster {
    LinearAr(LinearAr),
    Recurrent {
        net: Box<RecurrentNet>,
        grid: Vec<GridResult>,
    },
}

impl Forecaster {
    pub fn predict(&self, history: &[Vec<f64>]) -> Vec<f64> {
        match self {
            Forecaster::LinearAr(m) => m.predict(history),
            Forecaster::Recurrent { net, .. } => net.predict(history),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Forecaster::LinearAr(m) => m.dim(),
            Forecaster::Recurrent { net, .. } => net.shape().input,
        }
    }
}

pub fn train_forecaster(
    train: &[SequenceSample],
    validation: &[SequenceSample],
    cfg: &ForecasterConfig,
) -> Result<Forecaster> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split has no samples".into()));
    }
    let dim = train[0].target.len();
    if train
        .iter()
        .chain(validation)
        .any(|s| s.target.len() != dim || s.history.iter().any(|h| h.len() != dim))
    {
        return Err(Error::Dimension("samples disagree on embedding size".into()));
    }
    match cfg.kind {
        ForecasterKind::LinearAr => LinearAr::fit(train).map(Forecaster::LinearAr),
        ForecasterKind::Recurrent => {
            // Without a validation split the training split doubles as one.
            let val = if validation.is_empty() { train } else { validation };
            let shape = NetShape {
                input: dim,
                hidden: cfg.hidden,
                dense: cfg.dense.clone(),
            };
            let mut best: Option<(f64, RecurrentNet)> = None;
            let mut grid = Vec::new();
            for (gi, &lr) in cfg.learning_rate.iter().enumerate() {
                for (gj, &p) in cfg.dropout.iter().enumerate() {
                    let seed = cfg.seed.wrapping_add((gi * cfg.dropout.len() + gj) as u64);
                    let mut net = RecurrentNet::new(shape.clone(), seed);
                    match net.fit(train, val, lr, p, cfg.epochs, cfg.batch_size, seed) {
                        Ok(trace) => {
                            grid.push(GridResult {
                                learning_rate: lr,
                                dropout: p,
                                validation_mse: Some(trace.best_validation),
                                best_epoch: trace.best_epoch,
                            });
                            if best.as_ref().is_none_or(|(b, _)| trace.best_validation < *b) {
                                best = Some((trace.best_validation, net));
                            }
                        }
                        Err(Error::Diverged { .. }) => grid.push(GridResult {
                            learning_rate: lr,
                            dropout: p,
                            validation_mse: None,
                            best_epoch: 0,
                        }),
                        Err(e) => return Err(e),
                    }
                }
            }
            let (_, net) = best.ok_or(Error::Diverged {
                epoch: cfg.epochs,
                reason: "every grid point diverged".into(),
            })?;
            Ok(Forecaster::Recurrent {
                net: Box::new(net),
                grid,
            })
        }
    }
}

/// Mean over samples of the per-coordinate squared error.
pub fn mse(forecaster: &Forecaster, samples: &[SequenceSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to score".into()));
    }
    let errs = par::map_slice(samples, |s| {
        let p = forecaster.predict(&s.history);
        p.iter().zip(&s.target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
    });
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub mean: f64,
    pub scored: usize,
    /// Samples skipped because a vector had zero norm.
    pub skipped: usize,
}

/// Mean cosine similarity between forecasts and targets.
pub fn eval_embedding_prediction(forecaster: &Forecaster, test: &[SequenceSample]) -> Result<CosineReport> {
    if test.is_empty() {
        return Err(Error::Empty("no test samples".into()));
    }
    let sims = par::map_slice(test, |s| cosine(&forecaster.predict(&s.history), &s.target));
    let scored: Vec<f64> = sims.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::Empty("every test sample had a zero-norm vector".into()));
    }
    Ok(CosineReport {
        mean: scored.iter().sum::<f64>() / scored.len() as f64,
        scored: scored.len(),
        skipped: sims.len() - scored.len(),
    })
}
