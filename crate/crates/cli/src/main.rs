//! `dyntmf`: runs the pipeline one stage at a time, writing artifacts and a
//! manifest per stage under `--out`.

mod artifacts;
mod config;
mod error;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use artifacts::{Workspace, STAGES};
use config::RunConfig;
use error::{CliError, CliResult};
use stages::Ctx;

#[derive(Parser)]
#[command(name = "dyntmf", version, about = "Joint temporal matrix factorization of threaded conversations")]
struct Cli {
    /// JSON run config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.k=32`. Values parse as JSON, else as strings.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Artifact root [default: paths.out, else `out`].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Bucket the corpus into windows and select roster and vocabulary.
    Ingest,
    /// Build adjacency and content matrices.
    Matrices,
    /// Fit the factorization.
    Train,
    /// Score reconstruction on held-out and training cells.
    EvalRecon,
    /// k-means over stacked user embeddings.
    Cluster,
    /// Cluster purity over a K sweep.
    Purity,
    /// Fit the embedding forecaster.
    Forecast,
    /// Predict community affinity for test users.
    Predict,
    /// Word relevance series per cluster.
    Relevance,
    /// Concept lexicon scores per cluster.
    Concept,
    /// 2-D projections of user trajectories.
    Project,
    /// Every stage in order.
    Run,
    /// Print the resolved config.
    ShowConfig,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::Synth => "synth",
            Command::Ingest => "ingest",
            Command::Matrices => "matrices",
            Command::Train => "train",
            Command::EvalRecon => "eval-recon",
            Command::Cluster => "cluster",
            Command::Purity => "purity",
            Command::Forecast => "forecast",
            Command::Predict => "predict",
            Command::Relevance => "relevance",
            Command::Concept => "concept",
            Command::Project => "project",
            Command::Run | Command::ShowConfig => return None,
        })
    }
}

fn execute(cfg: &RunConfig, ws: &Workspace, stage: &str) -> CliResult<()> {
    let started = Instant::now();
    ws.check_upstream(cfg, stage)?;
    let dir = ws.begin(stage)?;
    stages::run_stage(&Ctx { cfg, ws }, stage, &dir)?;
    ws.finish(cfg, stage)?;
    ws.log(cfg, stage, started)?;
    eprintln!("{stage}: done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = config::load(cli.config.as_deref(), &cli.sets)?;
    if let Command::ShowConfig = cli.command {
        println!("{}", serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Compute(e.to_string()))?);
        return Ok(());
    }
    let root = cli.out.or_else(|| cfg.paths.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let ws = Workspace { root };
    let _lock = ws.lock()?;
    match cli.command.stage() {
        Some(stage) => {
            if stage == "synth" && !cfg.synthetic() {
                return Err(CliError::Config("synth needs paths.corpus to be null".into()));
            }
            execute(&cfg, &ws, stage)
        }
        None => STAGES
            .iter()
            .filter(|s| cfg.synthetic() || **s != "synth")
            .try_for_each(|s| execute(&cfg, &ws, s)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
