//! Word relevance series, concept scores, and 2-D trajectory projections.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dense::{dot, Matrix};
use crate::error::{Error, Result};
use crate::factorize::{EmbeddingSet, Factor};
use crate::forecast::{CommunityCentroids, Forecaster};

/// Words used by the fixtures and the demo pipeline.
pub const DEMO_LEXICON: [&str; 10] = [
    "attack", "fight", "hurt", "destroy", "punish", "revenge", "hate", "rage", "violent", "war",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptLexicon {
    pub name: String,
    pub words: Vec<String>,
}

impl ConceptLexicon {
    pub fn new(name: &str, words: &[&str]) -> Self {
        ConceptLexicon {
            name: name.to_string(),
            words: words.iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    pub fn demo() -> Self {
        ConceptLexicon::new("violence", &DEMO_LEXICON)
    }

    /// One token per line; blank lines and `#` comments are skipped.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let words: Vec<String> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        if words.is_empty() {
            return Err(Error::Empty(format!("lexicon '{name}' has no words")));
        }
        Ok(ConceptLexicon {
            name: name.to_string(),
            words,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "lexicon".into());
        ConceptLexicon::parse(&name, &text)
    }

    /// Vocabulary indices of present words, plus the words that are missing.
    pub fn resolve(&self, vocab: &[String]) -> (Vec<usize>, Vec<String>) {
        let mut present = Vec::new();
        let mut missing = Vec::new();
        for w in &self.words {
            match vocab.iter().position(|v| v == w) {
                Some(i) if !present.contains(&i) => present.push(i),
                Some(_) => {}
                None => missing.push(w.clone()),
            }
        }
        (present, missing)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSeries {
    pub subject: String,
    pub cluster_id: usize,
    pub cluster_size: usize,
    pub values: Vec<f64>,
}

fn dynamic_words(model: &EmbeddingSet) -> Result<&[Matrix]> {
    match &model.word {
        Factor::Dynamic(ws) => Ok(ws),
        Factor::Static(_) => Err(Error::Unsupported(format!(
            "static word factors yield constant series (variant {})",
            model.variant
        ))),
    }
}

/// `centroid · W_t[word]` for every timestep.
pub fn word_relevance(
    word: &str,
    vocab: &[String],
    centroid: &[f64],
    cluster_id: usize,
    cluster_size: usize,
    model: &EmbeddingSet,
) -> Result<RelevanceSeries> {
    let ws = dynamic_words(model)?;
    check_dim(centroid, model)?;
    let z = vocab
        .iter()
        .position(|v| v == word)
        .ok_or_else(|| Error::Config(format!("word '{word}' is not in the vocabulary")))?;
    Ok(RelevanceSeries {
        subject: word.to_string(),
        cluster_id,
        cluster_size,
        values: ws.iter().map(|w| dot(centroid, w.row(z))).collect(),
    })
}

fn check_dim(centroid: &[f64], model: &EmbeddingSet) -> Result<()> {
    if centroid.len() != model.k {
        return Err(Error::Dimension(format!(
            "centroid has {} dims, model k = {}",
            centroid.len(),
            model.k
        )));
    }
    Ok(())
}

/// Mean `W_t` row of the lexicon words present in the vocabulary.
pub fn concept_centroid(lexicon: &ConceptLexicon, vocab: &[String], model: &EmbeddingSet, t: usize) -> Result<Vec<f64>> {
    let (present, _) = lexicon.resolve(vocab);
    if present.is_empty() {
        return Err(Error::Empty(format!(
            "no word of lexicon '{}' is in the vocabulary",
            lexicon.name
        )));
    }
    if t >= model.timesteps {
        return Err(Error::Dimension(format!("timestep {t} out of range")));
    }
    let w = model.word_at(t);
    let mut mean = vec![0.0; model.k];
    for &z in &present {
        for (m, v) in mean.iter_mut().zip(w.row(z)) {
            *m += v;
        }
    }
    let n = present.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// `cluster_centroid · concept_centroid(t)` per timestep. With
/// `time_averaged`, one concept centroid averaged over all timesteps is used
/// for every `t`.
pub fn concept_score(
    centroid: &[f64],
    cluster_id: usize,
    cluster_size: usize,
    lexicon: &ConceptLexicon,
    vocab: &[String],
    model: &EmbeddingSet,
    time_averaged: bool,
) -> Result<RelevanceSeries> {
    dynamic_words(model)?;
    check_dim(centroid, model)?;
    let per_t = (0..model.timesteps)
        .map(|t| concept_centroid(lexicon, vocab, model, t))
        .collect::<Result<Vec<_>>>()?;
    let values = if time_averaged {
        let mut avg = vec![0.0; model.k];
        for c in &per_t {
            avg.iter_mut().zip(c).for_each(|(a, v)| *a += v / per_t.len() as f64);
        }
        vec![dot(centroid, &avg); model.timesteps]
    } else {
        per_t.iter().map(|c| dot(centroid, c)).collect()
    };
    Ok(RelevanceSeries {
        subject: lexicon.name.clone(),
        cluster_id,
        cluster_size,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SeriesRecord {
    subject: String,
    cluster_id: usize,
    cluster_size: usize,
    t: usize,
    value: f64,
}

/// CSV with one row per (series, t), in input order.
pub fn export_series(series: &[RelevanceSeries], path: &Path) -> Result<()> {
    // The header is written explicitly so an empty list still gets one.
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    w.write_record(["subject", "cluster_id", "cluster_size", "t", "value"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for s in series {
        for (t, v) in s.values.iter().enumerate() {
            w.serialize(SeriesRecord {
                subject: s.subject.clone(),
                cluster_id: s.cluster_id,
                cluster_size: s.cluster_size,
                t,
                value: *v,
            })
            .map_err(|e| Error::Format(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse of [`export_series`].
pub fn read_series(path: &Path) -> Result<Vec<RelevanceSeries>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut out: Vec<RelevanceSeries> = Vec::new();
    for rec in r.deserialize::<SeriesRecord>() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        match out.last_mut() {
            Some(s) if s.subject == rec.subject && s.cluster_id == rec.cluster_id && rec.t == s.values.len() => {
                s.values.push(rec.value)
            }
            _ => out.push(RelevanceSeries {
                subject: rec.subject,
                cluster_id: rec.cluster_id,
                cluster_size: rec.cluster_size,
                values: vec![rec.value],
            }),
        }
    }
    Ok(out)
}

/// Two leading principal components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// 2 × k, rows are unit components.
    pub components: Matrix,
    pub explained_variance: [f64; 2],
}

impl Pca {
    /// Each component's largest-magnitude loading is made positive.
    pub fn fit(x: &Matrix) -> Result<Self> {
        let (n, k) = x.shape();
        if k < 2 {
            return Err(Error::Config("projection needs k >= 2".into()));
        }
        if n == 0 {
            return Err(Error::Empty("no embeddings to project".into()));
        }
        let mean = x.column_mean();
        let centred = DMatrix::from_fn(n, k, |i, j| x.get(i, j) - mean[j]);
        let cov = centred.transpose() * &centred / n as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = Matrix::zeros(2, k);
        let mut explained = [0.0; 2];
        for (r, &c) in order.iter().take(2).enumerate() {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let sign = if lead < 0.0 { -1.0 } else { 1.0 };
            for (j, val) in v.iter().enumerate() {
                components.set(r, j, sign * val);
            }
            explained[r] = eig.eigenvalues[c].max(0.0);
        }
        Ok(Pca {
            mean,
            components,
            explained_variance: explained,
        })
    }

    pub fn project(&self, v: &[f64]) -> [f64; 2] {
        let centred: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        [dot(self.components.row(0), &centred), dot(self.components.row(1), &centred)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: String,
    /// Projected embedding at each timestep.
    pub points: Vec<[f64; 2]>,
    /// Projected forecast for the timestep after the last one.
    pub predicted: [f64; 2],
    pub centroid_labels: Vec<String>,
    pub centroids: Vec<[f64; 2]>,
    pub pca: Pca,
}

/// Projects a user's history, its forecast, and the community centroids onto
/// the top two principal components of `stacked`.
pub fn project_trajectory(
    stacked: &Matrix,
    user_id: &str,
    history: &[Vec<f64>],
    forecaster: &Forecaster,
    centroids: &CommunityCentroids,
) -> Result<Trajectory> {
    let pca = Pca::fit(stacked)?;
    if history.is_empty() {
        return Err(Error::Empty(format!("user '{user_id}' has no history")));
    }
    let predicted = pca.project(&forecaster.predict(history));
    Ok(Trajectory {
        user_id: user_id.to_string(),
        points: history.iter().map(|h| pca.project(h)).collect(),
        predicted,
        centroid_labels: centroids.names.clone(),
        centroids: centroids.centroids.iter_rows().map(|c| pca.project(c)).collect(),
        pca,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorize::Variant;

    fn model_with_words(ws: Vec<Matrix>) -> EmbeddingSet {
        let t = ws.len();
        let k = ws[0].cols();
        EmbeddingSet {
            variant: Variant::NoAdj,
            k,
            timesteps: t,
            user: Factor::Dynamic(vec![Matrix::zeros(1, k); t]),
            context: None,
            word: Factor::Dynamic(ws),
            adjacency_bias: None,
            content_bias: None,
        }
    }

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn lexicon_parsing_skips_comments() {
        let lex = ConceptLexicon::parse("v", "# header\nAttack\n\nwar # inline\n").unwrap();
        assert_eq!(lex.words, vec!["attack", "war"]);
        assert!(ConceptLexicon::parse("v", "# only\n").is_err());
    }

    #[test]
    fn three_word_concept_centroid() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -2.0], vec![2.0, 3.0], vec![9.0, 9.0]]).unwrap();
        let model = model_with_words(vec![w]);
        let lex = ConceptLexicon::new("c", &["w0", "w1", "w2", "absent"]);
        let c = concept_centroid(&lex, &vocab(4), &model, 0).unwrap();
        assert_eq!(c, vec![2.0, 1.0]);
        assert_eq!(lex.resolve(&vocab(4)).1, vec!["absent"]);
    }

    #[test]
    fn opposite_words_cancel() {
        let w = Matrix::from_rows(&[vec![1.0, -2.0], vec![-1.0, 2.0]]).unwrap();
        let model = model_with_words(vec![w]);
        let lex = ConceptLexicon::new("c", &["w0", "w1"]);
        assert_eq!(concept_centroid(&lex, &vocab(2), &model, 0).unwrap(), vec![0.0, 0.0]);
        let s = concept_score(&[3.0, 1.0], 0, 5, &lex, &vocab(2), &model, false).unwrap();
        assert_eq!(s.values, vec![0.0]);
    }

    #[test]
    fn static_words_are_rejected() {
        let mut model = model_with_words(vec![Matrix::zeros(2, 2)]);
        model.word = Factor::Static(Matrix::zeros(2, 2));
        let err = word_relevance("w0", &vocab(2), &[1.0, 0.0], 0, 1, &model).unwrap_err();
        assert!(err.to_string().contains("static word factors yield constant series"));
    }

    #[test]
    fn pca_on_two_dims_preserves_distances() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.5], vec![-1.0, 3.0], vec![4.0, 4.0]]).unwrap();
        let pca = Pca::fit(&x).unwrap();
        let p: Vec<[f64; 2]> = x.iter_rows().map(|r| pca.project(r)).collect();
        for i in 0..4 {
            for j in 0..4 {
                let d0 = crate::dense::squared_distance(x.row(i), x.row(j)).sqrt();
                let d1 = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        assert!(Pca::fit(&Matrix::zeros(3, 1)).is_err());
    }
}
