//! Dense matrices, reverse-mode gradients, and the Adam optimizer.

mod gradcheck;
mod loss;
mod matrix;
mod optim;
mod rng;
mod tape;

pub use gradcheck::{grad_check, grad_check_model};
pub use loss::{kl_div, kl_rows, nll_rows, softmax, softmax_xent, xent_rows, VectorLoss};
pub use matrix::Matrix;
pub use optim::{AdamConfig, Param, Parameterized};
pub use rng::{derive_seed, Rng};
pub use tape::{log_softmax_rows, Gradients, RotateQuery, Tape, Var};

pub(crate) use tape::rotate_into;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}
