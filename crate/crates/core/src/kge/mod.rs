//! Phase-rotation triple scoring, negative sampling, the candidate-set
//! cross-entropy loss and filtered link-prediction evaluation.
//!
//! Entity rows hold `d/2` real parts followed by `d/2` imaginary parts.
//! Relation tables have `2 * n_rel` rows of `d/2` phases; row `r + n_rel`
//! is the learned inverse of relation `r`, used for head prediction.

mod eval;
mod score;
mod train;

pub use eval::{
    aggregate_metrics, evaluate_triples, evaluate_with, filtered_rank, metrics_from_ranks, rank_of, FilterIndex,
    RankingMetrics,
};
pub use score::{init_entities, init_relations, rotate_score, score_all_tails};
pub use train::{kgc_loss, sample_negatives, score_candidates, training_queries, CandidateBatch, Query};

use thiserror::Error;

use crate::numcore::NumError;

/// Default margin of the score, `gamma - distance`.
pub const DEFAULT_GAMMA: f64 = 9.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgeError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("nothing to aggregate: {0}")]
    Empty(String),
}
