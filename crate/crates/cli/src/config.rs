use std::path::{Path, PathBuf};

use dyntmf::corpus::{FilterConfig, TimeWindowing};
use dyntmf::factorize::ModelConfig;
use dyntmf::forecast::ForecasterConfig;
use dyntmf::syndata::SynthConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// JSONL corpus; `null` uses the output of `synth`.
    pub corpus: Option<PathBuf>,
    /// Background corpus (JSONL or token stream); `null` uses `synth`'s.
    pub background: Option<PathBuf>,
    /// Posts of the window after training, for affinity targets.
    pub future: Option<PathBuf>,
    /// Concept lexicon files; empty uses the built-in demo lexicon.
    pub lexicons: Vec<PathBuf>,
    /// Artifact root; `--out` takes precedence, `null` means `out`.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowsConfig {
    Fixed { start: i64, window_length: i64, count: usize },
    Monthly { year: i32, month: u32, count: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub model: ModelConfig,
    /// Share of observed cells per row withheld for `eval-recon`.
    pub holdout_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            model: ModelConfig::default(),
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// K for the `cluster` stage.
    pub k: usize,
    pub max_iters: usize,
    /// Ks evaluated by `purity`.
    pub k_list: Vec<usize>,
    pub n_seeds: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        ClusterSection {
            k: 10,
            max_iters: dyntmf::cluster::DEFAULT_MAX_ITERS,
            k_list: vec![10, 100],
            n_seeds: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Words tracked by `relevance`.
    pub words: Vec<String>,
    /// Use one time-averaged concept centroid instead of one per timestep.
    pub time_averaged: bool,
    /// Only export clusters larger than this.
    pub min_cluster_size: usize,
    /// Users projected by `project`; empty takes the first three test users.
    pub users: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    /// `null` derives the windows from `synth`.
    pub windows: Option<WindowsConfig>,
    pub filter: FilterConfig,
    pub train: TrainSection,
    pub cluster: ClusterSection,
    pub forecast: ForecasterConfig,
    pub analyze: AnalyzeSection,
}

/// Defaults, then the config file, then `--set` overrides, in that order.
pub fn load(file: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("default config serialises");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let user: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, user, "")?;
    }
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{s}'")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut Value, over: Value, at: &str) -> Result<(), CliError> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) if !slot.is_null() => merge(slot, v, &path)?,
                    Some(slot) => *slot = v,
                    None => return Err(CliError::Config(format!("unknown config key '{path}'"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, key: &str, v: Value) -> Result<(), CliError> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("'{}' is not an object", parts[..i].join("."))))?;
        if !obj.contains_key(*p) {
            return Err(CliError::Config(format!("unknown config key '{key}'")));
        }
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), v);
            return Ok(());
        }
        let child = obj.get_mut(*p).expect("checked");
        if child.is_null() {
            *child = Value::Object(Default::default());
        }
        node = child;
    }
    unreachable!("split yields at least one part")
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let lib = |r: dyntmf::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        lib(self.synth.validate())?;
        lib(self.filter.validate())?;
        lib(self.train.model.validate())?;
        lib(self.forecast.validate())?;
        if !(0.0..1.0).contains(&self.train.holdout_fraction) {
            return Err(CliError::Config("train.holdout_fraction must lie in [0, 1)".into()));
        }
        if self.cluster.k == 0 || self.cluster.k_list.contains(&0) || self.cluster.n_seeds == 0 {
            return Err(CliError::Config("cluster sizes and n_seeds must be >= 1".into()));
        }
        if self.paths.corpus.is_some() && self.windows.is_none() {
            return Err(CliError::Config("an external corpus needs explicit windows".into()));
        }
        if self.paths.corpus.is_some() != self.paths.background.is_some() {
            return Err(CliError::Config("paths.corpus and paths.background go together".into()));
        }
        let files = [&self.paths.corpus, &self.paths.background, &self.paths.future];
        for p in files.into_iter().flatten().chain(&self.paths.lexicons) {
            if !p.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn synthetic(&self) -> bool {
        self.paths.corpus.is_none()
    }

    pub fn windowing(&self) -> dyntmf::Result<TimeWindowing> {
        match &self.windows {
            None => dyntmf::pipeline::synthetic_windows(&self.synth),
            Some(WindowsConfig::Fixed { start, window_length, count }) => {
                TimeWindowing::fixed(*start, *window_length, *count)
            }
            Some(WindowsConfig::Monthly { year, month, count }) => TimeWindowing::monthly(*year, *month, *count),
        }
    }
}

/// Seed of a stage: the run seed plus the first eight bytes of the SHA-256
/// of the stage name.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let d = Sha256::digest(stage.as_bytes());
    seed.wrapping_add(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
