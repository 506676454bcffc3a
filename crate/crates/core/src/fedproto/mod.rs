//! The federated protocol: distribution of global parameters, local
//! training, hybrid aggregation, early stopping and checkpoints.
//!
//! Clients hold local copies of the structural table and the two modality
//! projections. Objectives with global replicas train a second copy that
//! receives the server's values and is the one uploaded. Relation tables,
//! fusion parameters and imputers never leave a client.

mod checkpoint;
mod client;
mod federation;
mod map;
mod metrics;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use client::{ClientDiagnostics, ClientState, Upload, UploadKind};
pub use federation::{distribute, Federation, ServerState, SplitKind, TrainOutcome};
pub use map::{aggregate_structural, aggregate_weights, count_weights, PermutationMap};
pub use metrics::{write_metrics_csv, MetricRow, METRIC_CSV_HEADER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DataError;
use crate::fusion::FusionKind;
use crate::hide::{DiffusionSchedule, HideError, ImputerConfig};
use crate::kge::{KgeError, DEFAULT_GAMMA};
use crate::numcore::{AdamConfig, NumError};
use crate::objectives::{LossWeights, ObjectiveError, ObjectiveKind};

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Hide(#[from] HideError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss on client {client} in round {round}: {detail}")]
    NonFinite { client: usize, round: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Negative entities per query, capped by the client's entity count.
    pub negatives: usize,
    pub dim: usize,
    pub gamma: f64,
    pub optimizer: AdamConfig,
    pub fusion: FusionKind,
    pub imputer: ImputerConfig,
    pub objective: ObjectiveKind,
    pub weights: LossWeights,
    /// Fraction of clients sampled per round.
    pub client_fraction: f64,
    /// Structure-only rounds run before the main loop.
    pub warmstart_rounds: usize,
    /// With replicas, keep the local tables across rounds instead of
    /// overwriting them with the distributed values.
    pub personal_locals: bool,
    /// Skip every update; for testing the stopping rule.
    pub frozen: bool,
    /// Train sampled clients concurrently.
    pub parallel: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            local_epochs: 3,
            batch_size: 1024,
            patience: 5,
            negatives: 256,
            dim: 32,
            gamma: DEFAULT_GAMMA,
            optimizer: AdamConfig::default(),
            fusion: FusionKind::default(),
            imputer: ImputerConfig::default(),
            objective: ObjectiveKind::default(),
            weights: LossWeights::default(),
            client_fraction: 1.0,
            warmstart_rounds: 0,
            personal_locals: false,
            frozen: false,
            parallel: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ProtoError> {
        let positive = [
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("negatives", self.negatives),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ProtoError::Config(format!("{name} must be positive")));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(ProtoError::Config(format!("dim must be even and positive, got {}", self.dim)));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(ProtoError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.optimizer.lr.is_finite() && self.optimizer.lr > 0.0) {
            return Err(ProtoError::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(ProtoError::Config(format!(
                "client_fraction must be in (0, 1], got {}",
                self.client_fraction
            )));
        }
        self.weights.validate()?;
        DiffusionSchedule::linear(&self.imputer.schedule)?;
        if !(0.0..1.0).contains(&self.imputer.drop_rate) {
            return Err(ProtoError::Config(format!("drop_rate must be in [0, 1), got {}", self.imputer.drop_rate)));
        }
        Ok(())
    }
}
