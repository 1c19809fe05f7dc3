use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Temporal, Variant};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::matrices::BundleDims;

/// A latent factor that is either indexed by timestep or shared by all.
#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Dynamic(Vec<Matrix>),
    Static(Matrix),
}

impl Factor {
    pub fn at(&self, t: usize) -> &Matrix {
        match self {
            Factor::Dynamic(ms) => &ms[t],
            Factor::Static(m) => m,
        }
    }

    pub fn at_mut(&mut self, t: usize) -> &mut Matrix {
        match self {
            Factor::Dynamic(ms) => &mut ms[t],
            Factor::Static(m) => m,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, Factor::Static(_))
    }

    /// The distinct parameter matrices.
    pub fn matrices(&self) -> &[Matrix] {
        match self {
            Factor::Dynamic(ms) => ms,
            Factor::Static(m) => std::slice::from_ref(m),
        }
    }

    pub fn matrices_mut(&mut self) -> &mut [Matrix] {
        match self {
            Factor::Dynamic(ms) => ms,
            Factor::Static(m) => std::slice::from_mut(m),
        }
    }

    fn zeros_like(&self) -> Factor {
        match self {
            Factor::Dynamic(ms) => {
                Factor::Dynamic(ms.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect())
            }
            Factor::Static(m) => Factor::Static(Matrix::zeros(m.rows(), m.cols())),
        }
    }
}

/// Row and column bias vectors of one source matrix, one pair per timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBias {
    pub row: Vec<Vec<f64>>,
    pub col: Vec<Vec<f64>>,
}

impl SourceBias {
    fn zeros(timesteps: usize, rows: usize, cols: usize) -> Self {
        SourceBias {
            row: vec![vec![0.0; rows]; timesteps],
            col: vec![vec![0.0; cols]; timesteps],
        }
    }
}

/// The trained model: per-timestep user, context and word factors plus
/// optional biases.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub variant: Variant,
    pub k: usize,
    pub timesteps: usize,
    pub user: Factor,
    pub context: Option<Factor>,
    pub word: Factor,
    pub adjacency_bias: Option<SourceBias>,
    pub content_bias: Option<SourceBias>,
}

impl EmbeddingSet {
    pub fn users(&self) -> usize {
        self.user.at(0).rows()
    }

    pub fn contexts(&self) -> usize {
        self.context.as_ref().map_or(0, |c| c.at(0).rows())
    }

    pub fn words(&self) -> usize {
        self.word.at(0).rows()
    }

    pub fn user_at(&self, t: usize) -> &Matrix {
        self.user.at(t)
    }

    pub fn word_at(&self, t: usize) -> &Matrix {
        self.word.at(t)
    }

    pub fn context_at(&self, t: usize) -> Option<&Matrix> {
        self.context.as_ref().map(|c| c.at(t))
    }

    /// Embedding of user `i` at each timestep.
    pub fn user_history(&self, i: usize) -> Vec<Vec<f64>> {
        (0..self.timesteps).map(|t| self.user.at(t).row(i).to_vec()).collect()
    }

    pub fn zeros_like(&self) -> EmbeddingSet {
        EmbeddingSet {
            variant: self.variant,
            k: self.k,
            timesteps: self.timesteps,
            user: self.user.zeros_like(),
            context: self.context.as_ref().map(Factor::zeros_like),
            word: self.word.zeros_like(),
            adjacency_bias: self.adjacency_bias.as_ref().map(|b| SourceBias {
                row: b.row.iter().map(|v| vec![0.0; v.len()]).collect(),
                col: b.col.iter().map(|v| vec![0.0; v.len()]).collect(),
            }),
            content_bias: self.content_bias.as_ref().map(|b| SourceBias {
                row: b.row.iter().map(|v| vec![0.0; v.len()]).collect(),
                col: b.col.iter().map(|v| vec![0.0; v.len()]).collect(),
            }),
        }
    }

    /// Names of the parameter blocks, aligned with [`EmbeddingSet::blocks`].
    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut factor = |prefix: &str, f: &Factor| match f {
            Factor::Dynamic(ms) => names.extend((0..ms.len()).map(|t| format!("{prefix}[{t}]"))),
            Factor::Static(_) => names.push(prefix.to_string()),
        };
        factor("U", &self.user);
        if let Some(c) = &self.context {
            factor("V", c);
        }
        factor("W", &self.word);
        for (label, bias) in [("A", &self.adjacency_bias), ("C", &self.content_bias)] {
            if let Some(b) = bias {
                names.extend((0..b.row.len()).map(|t| format!("b_{label}_row[{t}]")));
                names.extend((0..b.col.len()).map(|t| format!("b_{label}_col[{t}]")));
            }
        }
        names
    }

    /// All parameters as an ordered list of flat blocks.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.user.matrices().iter().map(Matrix::as_slice));
        if let Some(c) = &self.context {
            out.extend(c.matrices().iter().map(Matrix::as_slice));
        }
        out.extend(self.word.matrices().iter().map(Matrix::as_slice));
        for b in [&self.adjacency_bias, &self.content_bias].into_iter().flatten() {
            out.extend(b.row.iter().map(Vec::as_slice));
            out.extend(b.col.iter().map(Vec::as_slice));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.user.matrices_mut().iter_mut().map(Matrix::as_mut_slice));
        if let Some(c) = &mut self.context {
            out.extend(c.matrices_mut().iter_mut().map(Matrix::as_mut_slice));
        }
        out.extend(self.word.matrices_mut().iter_mut().map(Matrix::as_mut_slice));
        for b in [&mut self.adjacency_bias, &mut self.content_bias]
            .into_iter()
            .flatten()
        {
            out.extend(b.row.iter_mut().map(Vec::as_mut_slice));
            out.extend(b.col.iter_mut().map(Vec::as_mut_slice));
        }
        out
    }

    /// Number of factor blocks (the leading part of [`EmbeddingSet::blocks`]);
    /// the remainder are biases.
    pub fn factor_block_count(&self) -> usize {
        self.user.matrices().len()
            + self.context.as_ref().map_or(0, |c| c.matrices().len())
            + self.word.matrices().len()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Re-labels a fully static model (trained on a pooled bundle) as
    /// covering `timesteps` windows; biases are repeated per window.
    pub fn broadcast(&self, timesteps: usize) -> Result<EmbeddingSet> {
        let all_static = self.user.is_static()
            && self.word.is_static()
            && self.context.as_ref().is_none_or(Factor::is_static);
        if !all_static {
            return Err(Error::Unsupported(format!(
                "variant {} has dynamic factors and cannot be broadcast",
                self.variant
            )));
        }
        let repeat = |b: &SourceBias| SourceBias {
            row: vec![b.row[0].clone(); timesteps],
            col: vec![b.col[0].clone(); timesteps],
        };
        Ok(EmbeddingSet {
            timesteps,
            adjacency_bias: self.adjacency_bias.as_ref().map(repeat),
            content_bias: self.content_bias.as_ref().map(repeat),
            ..self.clone()
        })
    }
}

/// Random initial model: factor entries i.i.d. `N(0, (0.1/√k)²)`, biases zero.
/// A dynamic factor starts from one draw shared by every timestep, so all
/// timesteps begin in the same latent coordinates.
pub fn init_model(cfg: &ModelConfig, dims: BundleDims, seed: u64) -> Result<EmbeddingSet> {
    if cfg.k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if dims.timesteps == 0 || dims.users == 0 || dims.words == 0 {
        return Err(Error::Dimension(format!("degenerate bundle dimensions {dims:?}")));
    }
    let spec = cfg.variant.spec();
    if spec.uses_adjacency && dims.contexts == 0 {
        return Err(Error::Dimension("variant needs context users".into()));
    }
    let std = 0.1 / (cfg.k as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| {
        let data = (0..rows * cfg.k).map(|_| normal.sample(&mut rng)).collect();
        Matrix::from_vec(rows, cfg.k, data).expect("shape")
    };
    let mut factor = |temporal: Temporal, rows: usize| match temporal {
        Temporal::Dynamic => Factor::Dynamic(vec![draw(rows); dims.timesteps]),
        Temporal::Static => Factor::Static(draw(rows)),
    };

    let user = factor(spec.user, dims.users);
    let context = spec.context.map(|tc| factor(tc, dims.contexts));
    let word = factor(spec.word, dims.words);
    let (adjacency_bias, content_bias) = if cfg.use_biases {
        (
            spec.uses_adjacency
                .then(|| SourceBias::zeros(dims.timesteps, dims.users, dims.contexts)),
            Some(SourceBias::zeros(dims.timesteps, dims.users, dims.words)),
        )
    } else {
        (None, None)
    };
    Ok(EmbeddingSet {
        variant: cfg.variant,
        k: cfg.k,
        timesteps: dims.timesteps,
        user,
        context,
        word,
        adjacency_bias,
        content_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(t: usize, m: usize, n: usize, d: usize) -> BundleDims {
        BundleDims {
            timesteps: t,
            users: m,
            contexts: n,
            words: d,
        }
    }

    #[test]
    fn same_seed_same_model() {
        let cfg = ModelConfig {
            k: 4,
            ..ModelConfig::default()
        };
        let a = init_model(&cfg, dims(3, 5, 4, 6), 7).unwrap();
        let b = init_model(&cfg, dims(3, 5, 4, 6), 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(&cfg, dims(3, 5, 4, 6), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shapes_follow_dims() {
        let cfg = ModelConfig {
            k: 1,
            ..ModelConfig::default()
        };
        let m = init_model(&cfg, dims(2, 2, 3, 4), 0).unwrap();
        assert_eq!(m.user_at(0).shape(), (2, 1));
        assert_eq!(m.context_at(1).unwrap().shape(), (3, 1));
        assert_eq!(m.word_at(1).shape(), (4, 1));
        let bias = m.content_bias.as_ref().unwrap();
        assert!(bias.row.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn statcont_allocates_single_context_and_word() {
        let cfg = ModelConfig {
            k: 2,
            variant: Variant::StatCont,
            ..ModelConfig::default()
        };
        let m = init_model(&cfg, dims(4, 3, 3, 3), 0).unwrap();
        assert_eq!(m.context.as_ref().unwrap().matrices().len(), 1);
        assert_eq!(m.word.matrices().len(), 1);
        assert_eq!(m.user.matrices().len(), 4);
        assert!(std::ptr::eq(m.word_at(0), m.word_at(3)));
    }

    #[test]
    fn noadj_has_no_context() {
        let cfg = ModelConfig {
            k: 2,
            variant: Variant::NoAdj,
            ..ModelConfig::default()
        };
        let m = init_model(&cfg, dims(2, 3, 3, 3), 0).unwrap();
        assert!(m.context.is_none());
        assert!(m.adjacency_bias.is_none());
    }

    #[test]
    fn init_scale() {
        let cfg = ModelConfig {
            k: 25,
            ..ModelConfig::default()
        };
        let m = init_model(&cfg, dims(1, 400, 10, 10), 3).unwrap();
        let u = m.user_at(0).as_slice();
        let var = u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64;
        // Expected variance 0.01/25 = 4e-4.
        assert!((var - 4e-4).abs() < 4e-5, "{var}");
    }

    #[test]
    fn broadcast_requires_static() {
        let cfg = ModelConfig {
            k: 2,
            variant: Variant::SharedMf,
            ..ModelConfig::default()
        };
        let m = init_model(&cfg, dims(1, 3, 3, 3), 0).unwrap();
        let b = m.broadcast(5).unwrap();
        assert_eq!(b.timesteps, 5);
        assert_eq!(b.user_at(4), m.user_at(0));
        let dynamic = init_model(&ModelConfig { k: 2, ..ModelConfig::default() }, dims(1, 3, 3, 3), 0).unwrap();
        assert!(dynamic.broadcast(2).is_err());
    }
}
