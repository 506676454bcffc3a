//! Per-client training objectives: the dual-distillation objective and the
//! federated baselines, plus the client model they are evaluated on.

mod model;

pub use model::{Branch, BranchParams, ClientInputs, ClientModel, Frozen, ModelDims};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{Fusion, FusionError};
use crate::hide::HideError;
use crate::kge::{CandidateBatch, KgeError};
use crate::numcore::{kl_rows, nll_rows, Matrix, NumError, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Hide(#[from] HideError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    /// Local link prediction only.
    #[serde(rename = "mmfede")]
    FedE,
    /// Plus a contrastive pull towards the global embeddings.
    #[serde(rename = "mmfedec")]
    FedEc,
    /// Plus a proximal penalty towards the global embeddings.
    #[serde(rename = "mmfedprox")]
    FedProx,
    /// Local and replica link prediction plus one-way logit distillation.
    #[serde(rename = "mmfedlu")]
    FedLu,
    /// Local and replica link prediction, two-way logit distillation and
    /// feature distillation.
    #[default]
    #[serde(rename = "mmfed3")]
    FeD3,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::FedE,
        ObjectiveKind::FedEc,
        ObjectiveKind::FedProx,
        ObjectiveKind::FedLu,
        ObjectiveKind::FeD3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::FedE => "mmfede",
            ObjectiveKind::FedEc => "mmfedec",
            ObjectiveKind::FedProx => "mmfedprox",
            ObjectiveKind::FedLu => "mmfedlu",
            ObjectiveKind::FeD3 => "mmfed3",
        }
    }

    /// Whether clients train global replicas and upload them.
    pub fn uses_replica(self) -> bool {
        matches!(self, ObjectiveKind::FedLu | ObjectiveKind::FeD3)
    }

    /// Whether the loss needs the round's global snapshot.
    pub fn uses_anchor(self) -> bool {
        matches!(self, ObjectiveKind::FedEc | ObjectiveKind::FedProx)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "mmfed3-hide" && *k == ObjectiveKind::FeD3))
            .ok_or_else(|| ObjectiveError::Config(format!("unknown objective {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Imputer loss.
    pub lambda: f64,
    /// Logit distillation.
    pub mu: f64,
    /// Feature distillation.
    pub eta: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Proximal coefficient.
    pub rho: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 1.0,
            eta: 1.0,
            tau: 0.5,
            rho: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let ok = [self.lambda, self.mu, self.eta, self.rho].iter().all(|w| w.is_finite() && *w >= 0.0);
        if !ok || !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(ObjectiveError::Config(format!("loss weights must be >= 0 with tau > 0: {self:?}")));
        }
        Ok(())
    }
}

/// Link-prediction cross-entropy from candidate log-probabilities, target
/// in column 0.
pub fn kgc_from_log_probs(tape: &mut Tape, log_probs: Var) -> Result<Var, ObjectiveError> {
    let rows = tape.shape(log_probs).0;
    Ok(nll_rows(tape, log_probs, &vec![0; rows])?)
}

/// Candidate log-probabilities of one branch.
pub fn branch_log_probs(
    tape: &mut Tape,
    fusion: &Fusion,
    views: (Var, Var, Var),
    rel: Var,
    batch: &CandidateBatch,
    gamma: f64,
) -> Result<Var, ObjectiveError> {
    Ok(fusion.log_probs(tape, views, rel, batch, gamma)?)
}

/// `(client -> server, server -> client)` distillation terms. Each is
/// `KL(teacher || student)` with the teacher detached.
pub fn logit_distill(tape: &mut Tape, client: Var, server: Var) -> Result<(Var, Var), ObjectiveError> {
    let c2s = kl_rows(tape, client, server)?;
    let s2c = kl_rows(tape, server, client)?;
    Ok((c2s, s2c))
}

/// Mean over rows of the squared distance between two embedding tables.
pub fn feature_distill(tape: &mut Tape, a: Var, b: Var) -> Result<Var, ObjectiveError> {
    let rows = tape.shape(a).0.max(1) as f64;
    let diff = tape.sub(a, b)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / rows))
}

/// `rho` times the mean squared row distance to a fixed anchor.
pub fn proximal(tape: &mut Tape, current: Var, anchor: &Matrix, rho: f64) -> Result<Var, ObjectiveError> {
    let a = tape.constant(anchor.clone());
    let d = feature_distill(tape, current, a)?;
    Ok(tape.scale(d, rho))
}

/// Two-way contrastive loss on cosine similarities: each row should be
/// closer to its `positive` row than to its `negative` row.
pub fn contrastive(
    tape: &mut Tape,
    current: Var,
    positive: &Matrix,
    negative: &Matrix,
    tau: f64,
) -> Result<Var, ObjectiveError> {
    let cur = tape.row_normalize(current);
    let mut logits = Vec::with_capacity(2);
    for m in [positive, negative] {
        let c = tape.constant(m.clone());
        let c = tape.row_normalize(c);
        let sim = tape.row_dot(cur, c)?;
        logits.push(tape.scale(sim, 1.0 / tau));
    }
    let logits = tape.concat_cols(&logits)?;
    let lp = tape.log_softmax_rows(logits);
    kgc_from_log_probs(tape, lp)
}

/// Loss components of one step. Terms with a zero weight are not built.
pub struct LossReport {
    pub total: Var,
    pub terms: Vec<(&'static str, f64)>,
}

/// Everything one step's objective reads besides the model.
pub struct StepContext<'a> {
    pub kind: ObjectiveKind,
    pub weights: LossWeights,
    pub gamma: f64,
    /// Fused embeddings right after the round's distribution, by local row.
    pub anchor: Option<&'a Matrix>,
    /// Fused embeddings at the end of the previous round, by local row.
    pub previous: Option<&'a Matrix>,
    /// Stop-gradient values to use instead of the live ones.
    pub frozen: Option<&'a Frozen>,
}
