//! Corpus-to-bundle glue shared by the command-line tool and the tests.

use crate::corpus::{
    build_vocab, filter_users, partition_timesteps, select_context_users, BackgroundModel, Bucket,
    CorpusStore, FilterConfig, TimeWindowing,
};
use crate::error::Result;
use crate::matrices::{build_aggregated_bundle, build_bundle, Manifests, MatrixBundle};
use crate::syndata::SynthConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub buckets: Vec<Bucket>,
    pub bundle: MatrixBundle,
}

/// Windows, filters, and builds per-timestep matrices. `n_context_users =
/// None` keeps every roster user as a context user.
pub fn prepare(
    store: &CorpusStore,
    windows: &TimeWindowing,
    filter: &FilterConfig,
    n_context_users: Option<usize>,
    background: &BackgroundModel,
) -> Result<Prepared> {
    let buckets = partition_timesteps(store, windows)?;
    let manifests = select_manifests(&buckets, filter, n_context_users)?;
    let bundle = build_bundle(&buckets, manifests, background)?;
    Ok(Prepared { buckets, bundle })
}

/// Roster, context roster, and vocabulary for `buckets`.
pub fn select_manifests(buckets: &[Bucket], filter: &FilterConfig, n_context_users: Option<usize>) -> Result<Manifests> {
    filter.validate()?;
    let roster = filter_users(buckets, filter)?;
    let cfg = FilterConfig {
        n_context_users: n_context_users.unwrap_or(roster.len()),
        ..filter.clone()
    };
    let context_roster = select_context_users(buckets, &roster, &cfg)?;
    let vocab = build_vocab(buckets, &roster, &cfg)?;
    Ok(Manifests {
        roster,
        context_roster,
        vocab,
    })
}

/// Same manifests, matrices pooled over all windows.
pub fn aggregate(prepared: &Prepared, background: &BackgroundModel) -> Result<MatrixBundle> {
    build_aggregated_bundle(&prepared.buckets, prepared.bundle.manifests.clone(), background)
}

/// The windows a synthetic corpus was generated over.
pub fn synthetic_windows(cfg: &SynthConfig) -> Result<TimeWindowing> {
    TimeWindowing::fixed(cfg.start, cfg.window_length, cfg.timesteps)
}
