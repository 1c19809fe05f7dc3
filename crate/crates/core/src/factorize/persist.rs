//! On-disk model layout: `manifest.json` plus one `CERB` file per factor
//! matrix per timestep (float32, row-major, little-endian).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, Factor, ModelConfig, SourceBias, Variant};
use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::matrices::Manifests;

const MAGIC: &[u8; 4] = b"CERB";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub variant: Variant,
    pub k: usize,
    #[serde(rename = "T")]
    pub timesteps: usize,
    pub m: usize,
    pub n: usize,
    pub d_vocab: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub c0: f64,
    pub seed: u64,
    pub epochs: usize,
    pub use_biases: bool,
    pub roster: String,
    pub context_roster: String,
    pub vocab: String,
    /// Factor files in load order.
    pub files: Vec<String>,
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.cols() as u64).to_le_bytes()).map_err(io)?;
    for v in m.as_slice() {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    parse_matrix(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn parse_matrix(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < 24 || &bytes[0..4] != MAGIC {
        return Err("bad header".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let body = &bytes[24..];
    if body.len() != rows * cols * 4 {
        return Err(format!(
            "expected {} payload bytes for {rows}x{cols}, found {}",
            rows * cols * 4,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn factor_files<'a>(prefix: &str, f: &'a Factor) -> Vec<(String, &'a Matrix)> {
    match f {
        Factor::Dynamic(ms) => ms
            .iter()
            .enumerate()
            .map(|(t, m)| (format!("{prefix}_t{t:03}.cerb"), m))
            .collect(),
        Factor::Static(m) => vec![(format!("{prefix}_static.cerb"), m)],
    }
}

fn bias_files(label: &str, b: &SourceBias) -> Vec<(String, Matrix)> {
    let mut out = Vec::new();
    for (t, (row, col)) in b.row.iter().zip(&b.col).enumerate() {
        out.push((
            format!("bias_{label}_row_t{t:03}.cerb"),
            Matrix::from_vec(1, row.len(), row.clone()).expect("shape"),
        ));
        out.push((
            format!("bias_{label}_col_t{t:03}.cerb"),
            Matrix::from_vec(1, col.len(), col.clone()).expect("shape"),
        ));
    }
    out
}

/// Writes the model, its manifests, and a manifest into `dir` (created if needed).
pub fn save_model(
    dir: &Path,
    model: &EmbeddingSet,
    cfg: &ModelConfig,
    manifests: &Manifests,
    epochs_run: usize,
) -> Result<ModelManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    let mut write = |name: String, m: &Matrix| -> Result<()> {
        write_matrix(&dir.join(&name), m)?;
        files.push(name);
        Ok(())
    };
    for (name, m) in factor_files("U", &model.user) {
        write(name, m)?;
    }
    if let Some(c) = &model.context {
        for (name, m) in factor_files("V", c) {
            write(name, m)?;
        }
    }
    for (name, m) in factor_files("W", &model.word) {
        write(name, m)?;
    }
    for (label, bias) in [("A", &model.adjacency_bias), ("C", &model.content_bias)] {
        if let Some(b) = bias {
            for (name, m) in bias_files(label, b) {
                write(name, &m)?;
            }
        }
    }

    write_json(&dir.join("roster.json"), &manifests.roster)?;
    write_json(&dir.join("context_roster.json"), &manifests.context_roster)?;
    write_json(&dir.join("vocab.json"), &manifests.vocab)?;

    let manifest = ModelManifest {
        variant: model.variant,
        k: model.k,
        timesteps: model.timesteps,
        m: model.users(),
        n: model.contexts(),
        d_vocab: model.words(),
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        c0: cfg.c0,
        seed: cfg.seed,
        epochs: epochs_run,
        use_biases: model.content_bias.is_some(),
        roster: "roster.json".into(),
        context_roster: "context_roster.json".into(),
        vocab: "vocab.json".into(),
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Loads a model saved by [`save_model`], validating every matrix against the
/// manifest dimensions.
pub fn load_model(dir: &Path) -> Result<(EmbeddingSet, ModelManifest, Manifests)> {
    let manifest: ModelManifest = read_json(&dir.join("manifest.json"))?;
    let manifests = Manifests {
        roster: read_json(&dir.join(&manifest.roster))?,
        context_roster: read_json(&dir.join(&manifest.context_roster))?,
        vocab: read_json(&dir.join(&manifest.vocab))?,
    };
    if manifests.roster.len() != manifest.m || manifests.vocab.len() != manifest.d_vocab {
        return Err(Error::Dimension("roster/vocab files disagree with manifest".into()));
    }
    let spec = manifest.variant.spec();
    let t_count = manifest.timesteps;
    let k = manifest.k;

    let load = |name: &str, rows: usize, cols: usize| -> Result<Matrix> {
        let m = read_matrix(&dir.join(name))?;
        if m.shape() != (rows, cols) {
            return Err(Error::Dimension(format!(
                "{name} is {}x{}, manifest implies {rows}x{cols}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(m)
    };
    let load_factor = |prefix: &str, rows: usize| -> Result<Factor> {
        let static_name = format!("{prefix}_static.cerb");
        if manifest.files.contains(&static_name) {
            Ok(Factor::Static(load(&static_name, rows, k)?))
        } else {
            (0..t_count)
                .map(|t| load(&format!("{prefix}_t{t:03}.cerb"), rows, k))
                .collect::<Result<Vec<_>>>()
                .map(Factor::Dynamic)
        }
    };
    let load_bias = |label: &str, rows: usize, cols: usize| -> Result<SourceBias> {
        let mut b = SourceBias {
            row: Vec::new(),
            col: Vec::new(),
        };
        for t in 0..t_count {
            b.row
                .push(load(&format!("bias_{label}_row_t{t:03}.cerb"), 1, rows)?.into_vec());
            b.col
                .push(load(&format!("bias_{label}_col_t{t:03}.cerb"), 1, cols)?.into_vec());
        }
        Ok(b)
    };

    let user = load_factor("U", manifest.m)?;
    let context = if spec.uses_adjacency {
        Some(load_factor("V", manifest.n)?)
    } else {
        None
    };
    let word = load_factor("W", manifest.d_vocab)?;
    let (adjacency_bias, content_bias) = if manifest.use_biases {
        (
            if spec.uses_adjacency {
                Some(load_bias("A", manifest.m, manifest.n)?)
            } else {
                None
            },
            Some(load_bias("C", manifest.m, manifest.d_vocab)?),
        )
    } else {
        (None, None)
    };
    let model = EmbeddingSet {
        variant: manifest.variant,
        k,
        timesteps: t_count,
        user,
        context,
        word,
        adjacency_bias,
        content_bias,
    };
    Ok((model, manifest, manifests))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_file_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cerb");
        let m = Matrix::from_vec(2, 2, vec![1.0, -0.5, 0.25, 2.0]).unwrap();
        write_matrix(&path, &m).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"CERB");
        assert_eq!(bytes.len(), 24 + 16);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(read_matrix(&path).unwrap(), m);
    }

    #[test]
    fn truncated_matrix_rejected() {
        assert!(parse_matrix(b"CERB\x01\x00\x00\x00").is_err());
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        assert!(parse_matrix(&bytes).is_err());
    }
}
