//! Active similarity learning with tuple-wise ranking queries.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`]: items, tuple queries, ranking responses and the response log.
//! - [`response`]: the distance-ratio triplet model and its tuple extension.
//! - [`embedding`]: probabilistic MDS over the elliptope (unit-diagonal PSD matrices).
//! - [`infogain`]: Monte Carlo mutual information between the embedding and a tuple's ranking.
//! - [`selection`]: burn-in, candidate downsampling, argmax selection and the experiment loop.
//! - [`oracles`]: simulated ranking oracles over a planted point cloud.
//! - [`metrics`]: Kendall's tau, holdout accuracy, coherence and normalized query counts.

pub mod embedding;
pub mod error;
pub mod infogain;
pub mod metrics;
pub mod oracles;
pub mod response;
pub mod seed;
pub mod selection;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    constituent_triplets, ItemCatalog, ItemId, RankingResponse, ResponseLog, ResponseSource,
    Triplet, TupleQuery,
};
