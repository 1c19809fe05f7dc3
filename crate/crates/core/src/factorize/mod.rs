//! Joint temporal factorization of adjacency and content matrices.
//!
//! Per timestep `t`, `A_t ≈ U_t V_tᵀ` and `C_t ≈ U_t W_tᵀ` share the user
//! factor `U_t`. The objective adds an L2 penalty on all factors and a
//! smoothing penalty on consecutive timesteps:
//!
//! ```text
//! J = Σ_t ‖A_t − Â_t‖²_w + ‖C_t − Ĉ_t‖²_w
//!   + λ1 Σ (‖U‖² + ‖V‖² + ‖W‖²)
//!   + λ2 Σ_{t<T} (‖U_{t+1} − U_t‖² + ‖V_{t+1} − V_t‖² + ‖W_{t+1} − W_t‖²)
//! ```
//!
//! where `‖·‖²_w` weights observed cells by 1, empty cells by `c0`, and rows
//! of inactive users by 0. Reconstructions optionally carry additive row and
//! column biases.

mod eval;
mod gradcheck;
mod model;
mod objective;
mod persist;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{
    eval_reconstruction, in_sample_metrics, make_holdout, reconstruct, reconstruction_metrics,
    HeldOutCell, HoldoutMask, ReconMetrics, ReconReport,
};
pub use gradcheck::{gradient_check, GradientCheck};
pub use model::{init_model, EmbeddingSet, Factor, SourceBias};
pub use objective::{loss, loss_and_gradient, LossBreakdown, TrainingData};
pub use persist::{load_model, read_matrix, save_model, write_matrix, ModelManifest};
pub use train::{train, train_with_holdout, TrainReport};

/// Which source matrix a reconstruction refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Adjacency,
    Content,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Dynamic U, V, W over adjacency and content.
    Cerberus,
    /// Dynamic U, W over content only.
    NoAdj,
    /// Dynamic U with static V, W.
    StatCont,
    /// Static factorization of time-aggregated content.
    MatFact,
    /// Static shared factorization of time-aggregated adjacency and content.
    SharedMf,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Cerberus,
        Variant::NoAdj,
        Variant::StatCont,
        Variant::MatFact,
        Variant::SharedMf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Cerberus => "cerberus",
            Variant::NoAdj => "noadj",
            Variant::StatCont => "statcont",
            Variant::MatFact => "matfact",
            Variant::SharedMf => "sharedmf",
        }
    }

    pub fn spec(self) -> VariantSpec {
        use Temporal::*;
        match self {
            Variant::Cerberus => VariantSpec {
                uses_adjacency: true,
                user: Dynamic,
                context: Some(Dynamic),
                word: Dynamic,
                time_aggregated: false,
            },
            Variant::NoAdj => VariantSpec {
                uses_adjacency: false,
                user: Dynamic,
                context: None,
                word: Dynamic,
                time_aggregated: false,
            },
            Variant::StatCont => VariantSpec {
                uses_adjacency: true,
                user: Dynamic,
                context: Some(Static),
                word: Static,
                time_aggregated: false,
            },
            Variant::MatFact => VariantSpec {
                uses_adjacency: false,
                user: Static,
                context: None,
                word: Static,
                time_aggregated: true,
            },
            Variant::SharedMf => VariantSpec {
                uses_adjacency: true,
                user: Static,
                context: Some(Static),
                word: Static,
                time_aggregated: true,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let valid: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!(
                    "unknown variant '{s}'; valid variants: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Temporal {
    Dynamic,
    Static,
}

/// Which factors a variant has, whether they vary over time, and which
/// source matrices enter its loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub uses_adjacency: bool,
    pub user: Temporal,
    /// `None` when the adjacency matrix is not modelled.
    pub context: Option<Temporal>,
    pub word: Temporal,
    /// Trained on a single-timestep bundle pooled over all windows.
    pub time_aggregated: bool,
}

pub fn make_variant(kind: &str) -> Result<VariantSpec> {
    Ok(kind.parse::<Variant>()?.spec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Latent dimension.
    pub k: usize,
    /// L2 weight.
    pub lambda1: f64,
    /// Temporal smoothing weight.
    pub lambda2: f64,
    /// Loss weight of empty cells.
    pub c0: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub use_biases: bool,
    pub mask_missing: bool,
    pub relax_nonneg: bool,
    /// Stop once the relative loss improvement stays below 1e-6 for 10
    /// consecutive epochs.
    pub early_stopping: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Cerberus,
            k: 100,
            lambda1: 0.1,
            lambda2: 1.0,
            c0: 0.01,
            learning_rate: 0.01,
            epochs: 100,
            seed: 0,
            use_biases: true,
            mask_missing: true,
            relax_nonneg: true,
            early_stopping: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be >= 0".into()));
        }
        if !(self.c0 > 0.0 && self.c0 <= 1.0) {
            return Err(Error::Config("c0 must lie in (0, 1]".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}
