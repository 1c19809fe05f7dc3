use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dyntmf::analyze::{concept_score, export_series, project_trajectory, word_relevance, ConceptLexicon};
use dyntmf::cluster::{kmeans, labels_from_buckets, purity_report, stack, ClusterModel, LabelLevel, StackedEmbeddings};
use dyntmf::corpus::{build_background, filter_users, load_corpus, partition_timesteps, write_jsonl, Bucket, CorpusFormat, Post};
use dyntmf::factorize::{
    eval_reconstruction, in_sample_metrics, load_model, make_holdout, read_matrix, save_model, train_with_holdout,
    write_matrix, EmbeddingSet, HoldoutMask,
};
use dyntmf::forecast::{
    community_centroids, concordance, engagement_targets, eval_embedding_prediction, interactions_from_buckets,
    make_sequences, mse, predict_affinity, train_forecaster, CommunityCentroids, ConcordanceMode, Forecaster,
    SequenceSplits,
};
use dyntmf::matrices::{build_aggregated_bundle, build_bundle, Manifests, MatrixBundle, SparseMatrix};
use dyntmf::pipeline::select_manifests;
use dyntmf::syndata::{generate, write_outputs};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{read_json, write_json, Workspace};
use crate::config::{stage_seed, RunConfig};
use crate::error::{CliError, CliResult};

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub ws: &'a Workspace,
}

impl Ctx<'_> {
    fn seed(&self, stage: &str) -> u64 {
        stage_seed(self.cfg.seed, stage)
    }

    fn corpus_path(&self) -> PathBuf {
        self.cfg
            .paths
            .corpus
            .clone()
            .unwrap_or_else(|| self.ws.dir("synth").join("corpus.jsonl"))
    }

    fn background_path(&self) -> PathBuf {
        self.cfg
            .paths
            .background
            .clone()
            .unwrap_or_else(|| self.ws.dir("synth").join("background.txt"))
    }

    fn future_path(&self) -> Option<PathBuf> {
        match &self.cfg.paths.future {
            Some(p) => Some(p.clone()),
            None if self.cfg.synthetic() => Some(self.ws.dir("synth").join("future.jsonl")),
            None => None,
        }
    }

    fn buckets(&self) -> CliResult<Vec<Bucket>> {
        let dir = self.ws.dir("ingest").join("buckets");
        let count: usize = read_json::<Vec<i64>>(&self.ws.dir("ingest").join("windows.json"))?.len() - 1;
        (0..count)
            .map(|t| Ok(load_corpus(&dir.join(format!("t{t:03}.jsonl")), CorpusFormat::Jsonl)?.posts))
            .collect()
    }

    fn manifests(&self) -> CliResult<Manifests> {
        let dir = self.ws.dir("ingest");
        Ok(Manifests {
            roster: read_json(&dir.join("roster.json"))?,
            context_roster: read_json(&dir.join("context_roster.json"))?,
            vocab: read_json(&dir.join("vocab.json"))?,
        })
    }

    /// The bundle the configured variant trains on.
    fn bundle(&self) -> CliResult<MatrixBundle> {
        let dir = self.ws.dir("matrices");
        let manifests = self.manifests()?;
        let (dir, names): (PathBuf, Vec<(String, String)>) = if self.cfg.train.model.variant.spec().time_aggregated {
            (dir.join("aggregated"), vec![("A.tmsp".into(), "C.tmsp".into())])
        } else {
            let t: usize = read_json::<Vec<i64>>(&self.ws.dir("ingest").join("windows.json"))?.len() - 1;
            (dir, (0..t).map(|t| (format!("A_t{t:03}.tmsp"), format!("C_t{t:03}.tmsp"))).collect())
        };
        let mut a = Vec::new();
        let mut c = Vec::new();
        for (an, cn) in names {
            a.push(SparseMatrix::load(&dir.join(an))?);
            c.push(SparseMatrix::load(&dir.join(cn))?);
        }
        Ok(MatrixBundle::new(a, c, manifests)?)
    }

    fn model(&self) -> CliResult<(EmbeddingSet, Manifests)> {
        let (model, _, manifests) = load_model(&self.ws.dir("train").join("model"))?;
        Ok((model, manifests))
    }

    fn stacked(&self, model: &EmbeddingSet, roster: &[String]) -> CliResult<StackedEmbeddings> {
        Ok(stack(model, roster, &self.bundle()?.activity())?)
    }

    fn clusters(&self) -> CliResult<(ClusterFile, dyntmf::Matrix)> {
        let dir = self.ws.dir("cluster");
        let file: ClusterFile = read_json(&dir.join("clusters.json"))?;
        let centroids = read_matrix(&dir.join(&file.centroids))?;
        Ok((file, centroids))
    }

    fn forecaster(&self) -> CliResult<(Forecaster, SplitUsers)> {
        let dir = self.ws.dir("forecast");
        Ok((read_json(&dir.join("forecaster.json"))?, read_json(&dir.join("splits.json"))?))
    }

    /// Communities seen in training and their centroids.
    fn community_centroids(&self, model: &EmbeddingSet, roster: &[String]) -> CliResult<CommunityCentroids> {
        let buckets = self.buckets()?;
        if model.timesteps != buckets.len() {
            return Err(CliError::Config(format!(
                "variant {} has no per-window user embeddings",
                model.variant
            )));
        }
        let names: Vec<String> = buckets
            .iter()
            .flatten()
            .map(|p| p.community.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(community_centroids(model, &names, &interactions_from_buckets(&buckets, roster))?)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterFile {
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
    iterations: usize,
    inertia: Vec<f64>,
    centroids: String,
    /// (user_id, t, cluster)
    rows: Vec<(String, usize, usize)>,
}

impl ClusterFile {
    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for r in &self.rows {
            s[r.2] += 1;
        }
        s
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitUsers {
    train: Vec<String>,
    test: Vec<String>,
    validation: Vec<String>,
}

fn users_of(samples: &[dyntmf::forecast::SequenceSample]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    samples
        .iter()
        .filter(|s| seen.insert(s.user_id.clone()))
        .map(|s| s.user_id.clone())
        .collect()
}

pub fn synth(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let mut cfg = ctx.cfg.synth.clone();
    cfg.seed = ctx.seed("synth");
    write_outputs(&generate(&cfg)?, dir)?;
    Ok(())
}

pub fn ingest(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let store = load_corpus(&ctx.corpus_path(), CorpusFormat::Jsonl)?;
    let windows = ctx.cfg.windowing()?;
    let buckets = partition_timesteps(&store, &windows)?;
    // More context users than roster users just means all of them.
    let eligible = filter_users(&buckets, &ctx.cfg.filter)?.len();
    let manifests = select_manifests(&buckets, &ctx.cfg.filter, Some(ctx.cfg.filter.n_context_users.min(eligible)))?;
    let bdir = dir.join("buckets");
    fs::create_dir_all(&bdir)?;
    for (t, b) in buckets.iter().enumerate() {
        write_jsonl(&bdir.join(format!("t{t:03}.jsonl")), b)?;
    }
    write_json(&dir.join("windows.json"), windows.boundaries())?;
    write_json(&dir.join("roster.json"), &manifests.roster)?;
    write_json(&dir.join("context_roster.json"), &manifests.context_roster)?;
    write_json(&dir.join("vocab.json"), &manifests.vocab)?;
    write_json(
        &dir.join("stats.json"),
        &json!({
            "posts": store.len(),
            "posts_per_window": buckets.iter().map(Vec::len).collect::<Vec<_>>(),
            "m": manifests.roster.len(),
            "n": manifests.context_roster.len(),
            "d_vocab": manifests.vocab.len(),
        }),
    )
}

pub fn matrices(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let buckets = ctx.buckets()?;
    let manifests = ctx.manifests()?;
    let bg = build_background(&ctx.background_path())?;
    let bundle = build_bundle(&buckets, manifests.clone(), &bg)?;
    let mut stats = Vec::new();
    for (t, (a, c)) in bundle.adjacency.iter().zip(&bundle.content).enumerate() {
        a.save(&dir.join(format!("A_t{t:03}.tmsp")))?;
        c.save(&dir.join(format!("C_t{t:03}.tmsp")))?;
        stats.push(json!({
            "t": t,
            "adjacency": { "nnz": a.nnz(), "active_rows": a.row_active().iter().filter(|x| **x).count(), "sparsity": a.sparsity() },
            "content": { "nnz": c.nnz(), "active_rows": c.row_active().iter().filter(|x| **x).count(), "sparsity": c.sparsity() },
        }));
    }
    let agg = build_aggregated_bundle(&buckets, manifests, &bg)?;
    let adir = dir.join("aggregated");
    fs::create_dir_all(&adir)?;
    agg.adjacency[0].save(&adir.join("A.tmsp"))?;
    agg.content[0].save(&adir.join("C.tmsp"))?;
    write_json(&dir.join("stats.json"), &stats)
}

pub fn train(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let bundle = ctx.bundle()?;
    let mut mcfg = ctx.cfg.train.model.clone();
    mcfg.seed = ctx.seed("train");
    let holdout = make_holdout(&bundle, ctx.cfg.train.holdout_fraction, mcfg.seed)?;
    let (model, report) = train_with_holdout(&bundle, &mcfg, (!holdout.is_empty()).then_some(&holdout))?;
    save_model(&dir.join("model"), &model, &mcfg, &bundle.manifests, report.epochs_run)?;
    write_json(&dir.join("holdout.json"), &holdout)?;
    write_json(&dir.join("report.json"), &report)
}

pub fn eval_recon(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let bundle = ctx.bundle()?;
    let (model, _) = ctx.model()?;
    let holdout: HoldoutMask = read_json(&ctx.ws.dir("train").join("holdout.json"))?;
    let c0 = ctx.cfg.train.model.c0;
    let held_out = if holdout.is_empty() {
        None
    } else {
        Some(eval_reconstruction(&model, &bundle, &holdout, c0)?)
    };
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "c0": c0,
            "held_out": held_out,
            "in_sample": in_sample_metrics(&model, &bundle, c0)?,
        }),
    )
}

pub fn cluster(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let (model, manifests) = ctx.model()?;
    let st = ctx.stacked(&model, &manifests.roster)?;
    let seed = ctx.seed("cluster");
    let cm: ClusterModel = kmeans(&st.x, ctx.cfg.cluster.k, seed, ctx.cfg.cluster.max_iters)?;
    write_matrix(&dir.join("centroids.cerb"), &cm.centroids)?;
    let file = ClusterFile {
        k: cm.n_clusters,
        seed,
        iterations: cm.iterations,
        inertia: cm.inertia.clone(),
        centroids: "centroids.cerb".into(),
        rows: st
            .keys
            .iter()
            .zip(&cm.assignment)
            .map(|((u, t), c)| (u.clone(), *t, *c))
            .collect(),
    };
    write_json(&dir.join("clusters.json"), &file)
}

pub fn purity(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let (model, manifests) = ctx.model()?;
    let st = ctx.stacked(&model, &manifests.roster)?;
    let mut buckets = ctx.buckets()?;
    if model.timesteps == 1 && buckets.len() > 1 {
        buckets = vec![buckets.into_iter().flatten().collect()];
    }
    let levels = [LabelLevel::Category, LabelLevel::Community];
    let sets: Vec<_> = levels.iter().map(|l| labels_from_buckets(&buckets, *l)).collect();
    let named: Vec<(String, &_)> = levels.iter().zip(&sets).map(|(l, s)| (l.name().to_string(), s)).collect();
    let rows = purity_report(
        &st,
        &named,
        &ctx.cfg.cluster.k_list,
        ctx.cfg.cluster.n_seeds,
        ctx.seed("purity"),
    )?;
    write_json(&dir.join("purity.json"), &rows)
}

pub fn forecast(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let (model, manifests) = ctx.model()?;
    let mut fcfg = ctx.cfg.forecast.clone();
    fcfg.seed = ctx.seed("forecast");
    let splits: SequenceSplits = make_sequences(&model, &manifests.roster, fcfg.split, fcfg.seed)?;
    let fc = train_forecaster(&splits.train, &splits.validation, &fcfg)?;
    let test = if splits.test.is_empty() { &splits.train } else { &splits.test };
    let grid = match &fc {
        Forecaster::Recurrent { grid, .. } => Some(grid.clone()),
        Forecaster::LinearAr(_) => None,
    };
    write_json(&dir.join("forecaster.json"), &fc)?;
    write_json(
        &dir.join("splits.json"),
        &SplitUsers {
            train: users_of(&splits.train),
            test: users_of(&splits.test),
            validation: users_of(&splits.validation),
        },
    )?;
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "kind": fcfg.kind,
            "test_mse": mse(&fc, test)?,
            "cosine": eval_embedding_prediction(&fc, test)?,
            "grid": grid,
        }),
    )
}

pub fn predict(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let (model, manifests) = ctx.model()?;
    let roster = &manifests.roster;
    let (fc, splits) = ctx.forecaster()?;
    let centroids = ctx.community_centroids(&model, roster)?;
    let future: Vec<Post> = match ctx.future_path() {
        Some(p) => load_corpus(&p, CorpusFormat::Jsonl)?.posts,
        None => Vec::new(),
    };
    let targets = engagement_targets(&future, roster, &centroids.names);
    let index: BTreeMap<&str, usize> = roster.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();

    let mut csv = String::from("user_id,community,s,y_hat,y_true\n");
    let (mut hat, mut truth) = (Vec::new(), Vec::new());
    let mut degenerate = 0;
    for user in &splits.test {
        let i = index[user.as_str()];
        let mut p = predict_affinity(&fc, user, &model.user_history(i), &centroids)?;
        p.y_true = targets[i].clone();
        degenerate += usize::from(p.degenerate);
        for (c, name) in centroids.names.iter().enumerate() {
            let yt = p.y_true.as_ref().map_or(String::new(), |y| y[c].to_string());
            writeln!(csv, "{user},{name},{},{},{yt}", p.s[c], p.y_hat[c]).expect("string write");
        }
        if let Some(y) = p.y_true {
            hat.push(p.y_hat);
            truth.push(y);
        }
    }
    fs::write(dir.join("predictions.csv"), csv)?;

    let ci = |mode| concordance(&hat, &truth, mode).ok();
    let within = ci(ConcordanceMode::WithinSample).map(|r| r.mean);
    let per_class: BTreeMap<&String, Option<f64>> = match ci(ConcordanceMode::PerClass) {
        Some(r) => centroids.names.iter().zip(r.per_item).collect(),
        None => BTreeMap::new(),
    };
    let samples = make_sequences(&model, roster, ctx.cfg.forecast.split, ctx.seed("forecast"))?;
    let cosine = if samples.test.is_empty() {
        None
    } else {
        Some(eval_embedding_prediction(&fc, &samples.test)?.mean)
    };
    write_json(
        &dir.join("metrics.json"),
        &json!({
            "cosine_mean": cosine,
            "ci_within": within,
            "ci_per_class": per_class,
            "users": splits.test.len(),
            "users_with_targets": truth.len(),
            "degenerate": degenerate,
        }),
    )
}

fn kept_clusters(ctx: &Ctx, file: &ClusterFile) -> Vec<(usize, usize)> {
    file.sizes()
        .into_iter()
        .enumerate()
        .filter(|(_, n)| *n > ctx.cfg.analyze.min_cluster_size)
        .collect()
}

pub fn relevance(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let (model, manifests) = ctx.model()?;
    let (file, centroids) = ctx.clusters()?;
    let mut series = Vec::new();
    let mut missing = Vec::new();
    for word in &ctx.cfg.analyze.words {
        let w = word.to_lowercase();
        if !manifests.vocab.contains(&w) {
            missing.push(w);
            continue;
        }
        for (c, size) in kept_clusters(ctx, &file) {
            series.push(word_relevance(&w, &manifests.vocab, centroids.row(c), c, size, &model)?);
        }
    }
    export_series(&series, &dir.join("series.csv"))?;
    write_json(&dir.join("report.json"), &json!({ "missing_words": missing }))
}

pub fn concept(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let (model, manifests) = ctx.model()?;
    let (file, centroids) = ctx.clusters()?;
    let lexicons = if ctx.cfg.paths.lexicons.is_empty() {
        vec![ConceptLexicon::demo()]
    } else {
        ctx.cfg
            .paths
            .lexicons
            .iter()
            .map(|p| ConceptLexicon::load(p))
            .collect::<dyntmf::Result<Vec<_>>>()?
    };
    let mut series = Vec::new();
    let mut report = Vec::new();
    for lex in &lexicons {
        let (present, missing) = lex.resolve(&manifests.vocab);
        if present.is_empty() {
            eprintln!("concept: skipping lexicon '{}', none of its words are in the vocabulary", lex.name);
            report.push(json!({ "lexicon": lex.name, "present": 0, "missing": missing, "mean_score": null }));
            continue;
        }
        let mut means = BTreeMap::new();
        for (c, size) in kept_clusters(ctx, &file) {
            let s = concept_score(
                centroids.row(c),
                c,
                size,
                lex,
                &manifests.vocab,
                &model,
                ctx.cfg.analyze.time_averaged,
            )?;
            means.insert(c, s.values.iter().sum::<f64>() / s.values.len() as f64);
            series.push(s);
        }
        report.push(json!({
            "lexicon": lex.name,
            "present": present.len(),
            "missing": missing,
            "mean_score": means,
        }));
    }
    export_series(&series, &dir.join("concept.csv"))?;
    write_json(&dir.join("report.json"), &report)
}

pub fn project(ctx: &Ctx, dir: &Path) -> CliResult<()> {
    let (model, manifests) = ctx.model()?;
    let roster = &manifests.roster;
    let (fc, splits) = ctx.forecaster()?;
    let st = ctx.stacked(&model, roster)?;
    let centroids = ctx.community_centroids(&model, roster)?;
    let users: Vec<String> = if ctx.cfg.analyze.users.is_empty() {
        splits.test.iter().take(3).cloned().collect()
    } else {
        ctx.cfg.analyze.users.clone()
    };
    let trajectories = users
        .iter()
        .map(|u| {
            let i = roster
                .iter()
                .position(|r| r == u)
                .ok_or_else(|| CliError::Config(format!("user '{u}' is not in the roster")))?;
            Ok(project_trajectory(&st.x, u, &model.user_history(i), &fc, &centroids)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    write_json(&dir.join("trajectories.json"), &trajectories)
}

pub fn run_stage(ctx: &Ctx, stage: &str, dir: &Path) -> CliResult<()> {
    match stage {
        "synth" => synth(ctx, dir),
        "ingest" => ingest(ctx, dir),
        "matrices" => matrices(ctx, dir),
        "train" => train(ctx, dir),
        "eval-recon" => eval_recon(ctx, dir),
        "cluster" => cluster(ctx, dir),
        "purity" => purity(ctx, dir),
        "forecast" => forecast(ctx, dir),
        "predict" => predict(ctx, dir),
        "relevance" => relevance(ctx, dir),
        "concept" => concept(ctx, dir),
        "project" => project(ctx, dir),
        other => Err(CliError::Config(format!("unknown stage '{other}'"))),
    }
}
