//! Objective gradient, matrix construction and k-means, each timed on the
//! global rayon pool and on a one-thread pool. Building with
//! `--no-default-features` benchmarks the plain-iterator path instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dyntmf::cluster::kmeans;
use dyntmf::corpus::{partition_timesteps, BackgroundModel, CorpusStore, FilterConfig};
use dyntmf::factorize::{init_model, loss_and_gradient, ModelConfig, TrainingData};
use dyntmf::matrices::build_bundle;
use dyntmf::pipeline::{select_manifests, synthetic_windows};
use dyntmf::syndata::{generate, SynthConfig};
use dyntmf::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pools() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let mut out = vec![("default", None)];
    if cfg!(feature = "parallel") {
        out.push(("one-thread", Some(rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())));
    }
    out
}

fn on<R>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

fn benches(c: &mut Criterion) {
    let cfg = SynthConfig {
        users_per_community: 60,
        background_tokens: 20_000,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    let bg = BackgroundModel::from_tokens(out.background.iter()).unwrap();
    let buckets = partition_timesteps(&CorpusStore::new(out.posts), &synthetic_windows(&cfg).unwrap()).unwrap();
    let manifests = select_manifests(&buckets, &FilterConfig::default(), None).unwrap();
    let bundle = build_bundle(&buckets, manifests.clone(), &bg).unwrap();
    let mcfg = ModelConfig { k: 32, ..ModelConfig::default() };
    let model = init_model(&mcfg, bundle.dims(), 0).unwrap();
    let data = TrainingData::new(&bundle, &mcfg, None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let points = Matrix::from_vec(4000, 16, (0..4000 * 16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    let mut group = c.benchmark_group("parallel_vs_sequential");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("loss_and_gradient", name), |b| {
            b.iter(|| on(&pool, || loss_and_gradient(&model, &data, &mcfg).unwrap()))
        });
        group.bench_function(BenchmarkId::new("build_bundle", name), |b| {
            b.iter(|| on(&pool, || build_bundle(&buckets, manifests.clone(), &bg).unwrap()))
        });
        group.bench_function(BenchmarkId::new("kmeans", name), |b| {
            b.iter(|| on(&pool, || kmeans(&points, 10, 0, 50).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
