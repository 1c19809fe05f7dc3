use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{sha256_hex, stage_seed, RunConfig};
use crate::error::{CliError, CliResult};

/// Every stage in pipeline order.
pub const STAGES: [&str; 12] = [
    "synth",
    "ingest",
    "matrices",
    "train",
    "eval-recon",
    "cluster",
    "purity",
    "forecast",
    "predict",
    "relevance",
    "concept",
    "project",
];

/// Stages whose artifacts `stage` reads directly.
pub fn upstream(cfg: &RunConfig, stage: &str) -> Vec<&'static str> {
    match stage {
        "synth" => vec![],
        "ingest" if cfg.synthetic() => vec!["synth"],
        "ingest" => vec![],
        "matrices" => vec!["ingest"],
        "train" => vec!["matrices"],
        "eval-recon" | "cluster" | "purity" | "forecast" => vec!["train"],
        "predict" | "project" => vec!["forecast"],
        "relevance" | "concept" => vec!["cluster"],
        other => unreachable!("unknown stage {other}"),
    }
}

/// The config fields a stage reads itself.
fn section(cfg: &RunConfig, stage: &str) -> Value {
    let mut forecast = cfg.forecast.clone();
    forecast.seed = 0;
    let mut train = cfg.train.clone();
    train.model.seed = 0;
    let mut synth = cfg.synth.clone();
    synth.seed = 0;
    match stage {
        "synth" => json!(synth),
        "ingest" => json!({
            "corpus": cfg.paths.corpus,
            "windows": cfg.windowing().ok().map(|w| w.boundaries().to_vec()),
            "filter": cfg.filter,
        }),
        "matrices" => json!({ "background": cfg.paths.background }),
        "train" => json!(train),
        "cluster" => json!({ "k": cfg.cluster.k, "max_iters": cfg.cluster.max_iters }),
        "purity" => json!({
            "k_list": cfg.cluster.k_list,
            "n_seeds": cfg.cluster.n_seeds,
            "max_iters": cfg.cluster.max_iters,
        }),
        "forecast" => json!(forecast),
        "predict" => json!({ "future": cfg.paths.future }),
        "relevance" => json!({ "words": cfg.analyze.words, "min_cluster_size": cfg.analyze.min_cluster_size }),
        "concept" => json!({
            "lexicons": cfg.paths.lexicons,
            "time_averaged": cfg.analyze.time_averaged,
            "min_cluster_size": cfg.analyze.min_cluster_size,
        }),
        "project" => json!({ "users": cfg.analyze.users }),
        _ => Value::Null,
    }
}

/// Cumulative hash of a stage: its own config section, its seed, and the
/// hashes of its upstream stages.
pub fn config_hash(cfg: &RunConfig, stage: &str) -> String {
    let ups: Vec<String> = upstream(cfg, stage).iter().map(|u| config_hash(cfg, u)).collect();
    let doc = json!({
        "stage": stage,
        "seed": stage_seed(cfg.seed, stage),
        "config": section(cfg, stage),
        "upstream": ups,
    });
    sha256_hex(doc.to_string().as_bytes())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub upstream: BTreeMap<String, String>,
    /// Relative path → SHA-256 of every file the stage wrote.
    pub files: BTreeMap<String, String>,
}

pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn dir(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    /// Fails with exit code 2 unless every upstream manifest exists and
    /// matches the current config.
    pub fn check_upstream(&self, cfg: &RunConfig, stage: &str) -> CliResult<()> {
        for up in upstream(cfg, stage) {
            let path = self.dir(up).join("manifest.json");
            if !path.is_file() {
                return Err(CliError::Missing(format!(
                    "missing upstream artifact {}; run `dyntmf {up}` first",
                    path.display()
                )));
            }
            let m: StageManifest = read_json(&path)?;
            if m.config_hash != config_hash(cfg, up) {
                return Err(CliError::Missing(format!(
                    "stale upstream artifact {} (config hash mismatch); rerun `dyntmf {up}`",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Empties the stage directory and returns it.
    pub fn begin(&self, stage: &str) -> CliResult<PathBuf> {
        let dir = self.dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn finish(&self, cfg: &RunConfig, stage: &str) -> CliResult<()> {
        let dir = self.dir(stage);
        let mut files = BTreeMap::new();
        collect_files(&dir, &dir, &mut files)?;
        let manifest = StageManifest {
            stage: stage.to_string(),
            config_hash: config_hash(cfg, stage),
            seed: stage_seed(cfg.seed, stage),
            upstream: upstream(cfg, stage)
                .into_iter()
                .map(|u| (u.to_string(), config_hash(cfg, u)))
                .collect(),
            files,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    /// Run logs carry wall time, so they live outside the stage directories.
    pub fn log(&self, cfg: &RunConfig, stage: &str, started: Instant) -> CliResult<()> {
        let dir = self.root.join("logs");
        fs::create_dir_all(&dir)?;
        let entry = json!({
            "subcommand": stage,
            "config_hash": config_hash(cfg, stage),
            "wall_time_secs": started.elapsed().as_secs_f64(),
            "versions": { "dyntmf": env!("CARGO_PKG_VERSION") },
        });
        write_json(&dir.join(format!("{stage}.json")), &entry)
    }

    pub fn lock(&self) -> CliResult<Lock> {
        fs::create_dir_all(&self.root)?;
        let path = self.root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Compute(format!(
                "{} exists; another run may be writing here (remove it if not)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

/// Advisory lock, released on drop.
pub struct Lock(PathBuf);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> CliResult<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("inside root").to_string_lossy().replace('\\', "/");
            if rel != "manifest.json" {
                out.insert(rel, sha256_hex(&fs::read(&path)?));
            }
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Compute(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
}
