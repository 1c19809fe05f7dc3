//! Jointly trained dynamic user and word embeddings for thread-structured
//! conversation corpora.
//!
//! Per timestep, a social adjacency matrix (users × context users, built from
//! thread co-participation) and a PPMI content matrix (users × words) are
//! decomposed with a shared user factor. A temporal smoothing penalty ties the
//! per-timestep factors together so that embeddings stay aligned over time.
//!
//! The crate covers the whole pipeline:
//!
//! * [`corpus`]: JSONL loading, time windowing, user/vocabulary filtering.
//! * [`matrices`]: adjacency and PPMI construction, triplet storage.
//! * [`factorize`]: the joint objective, its variants, Adam training.
//! * [`cluster`]: k-means over stacked (user, timestep) embeddings and purity.
//! * [`forecast`]: embedding forecasting, community affinity, concordance.
//! * [`analyze`]: word relevance series, concept scores, trajectory projection.
//! * [`syndata`]: planted-community corpus generator.
//! * [`pipeline`]: corpus-to-matrices glue.
//!
//! Data-parallel loops go through rayon when the `parallel` feature is on
//! (the default). Every reduction runs in a fixed order, so results are
//! bit-identical with or without the feature.

pub mod analyze;
pub mod cluster;
pub mod corpus;
pub mod dense;
pub mod error;
pub mod factorize;
pub mod forecast;
pub mod matrices;
pub mod optim;
mod par;
pub mod pipeline;
pub mod syndata;

pub use dense::Matrix;
pub use error::{Error, Result};
