//! Diffusion-based imputation of missing modality embeddings.
//!
//! Rows are `[S | V | D]` blocks. The observed coordinates are noised,
//! reconstructed by a step-conditioned network and scored with a masked
//! error; a mean-only reverse chain produces values for the missing blocks.

mod diffusion;
mod imputer;
mod net;
mod schedule;

pub use diffusion::{
    build_hypermodal, drop_blocks, hyper_mask, impute, impute_values, masked_diffusion_loss, masked_diffusion_loss_from, masked_mse, reverse_generate,
    split_views, HyperModal,
};
pub use imputer::{Imputed, Imputer, ImputerConfig, ImputerKind};
pub use net::{step_embedding, Linear, ReconKind, ReconNet, STEP_EMBED_DIM};
pub use schedule::{q_sample, q_sample_rows, DiffusionSchedule, ScheduleConfig, ScheduleMode};

use thiserror::Error;

use crate::numcore::NumError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HideError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("diffusion step {t} outside 1..={steps}")]
    Step { t: usize, steps: usize },
}
