//! One client: its data, model and local training loop.

use serde::{Deserialize, Serialize};

use super::{PermutationMap, ProtoError, TrainingConfig};
use crate::dataset::{ClientShard, Triple};
use crate::kge::{evaluate_with, kgc_loss, training_queries, CandidateBatch, FilterIndex, RankingMetrics};
use crate::numcore::{Matrix, Param, Parameterized, Rng, Tape};
use crate::objectives::{ClientInputs, ClientModel, ModelDims, StepContext};

/// Which parameter copy an upload carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UploadKind {
    Local,
    Replica,
}

/// What a client sends to the server after local training. There is no
/// field for relation, fusion or imputer parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    pub client_id: usize,
    pub kind: UploadKind,
    /// Structural rows in local entity order.
    pub entity: Matrix,
    pub visual: Matrix,
    pub textual: Matrix,
    pub train_triples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientDiagnostics {
    pub client: usize,
    pub steps: usize,
    pub mean_loss: f64,
    /// Loss components of the last step.
    pub last_terms: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub map: PermutationMap,
    pub num_relations: usize,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub inputs: ClientInputs,
    pub model: ClientModel,
    /// Fused embeddings right after the latest distribution.
    pub anchor: Option<Matrix>,
    /// Fused embeddings at the end of the previous local training.
    pub previous: Option<Matrix>,
    filter: FilterIndex,
}

impl ClientState {
    pub fn new(shard: &ClientShard, global_entities: usize, cfg: &TrainingConfig, rng: &mut Rng) -> Result<Self, ProtoError> {
        let dims = ModelDims {
            entities: shard.num_entities(),
            relations: shard.num_relations(),
            dim: cfg.dim,
            visual_dim: shard.visual.cols(),
            textual_dim: shard.textual.cols(),
        };
        let model = ClientModel::new(dims, cfg.fusion, &cfg.imputer, cfg.objective.uses_replica(), cfg.gamma, rng)?;
        Ok(Self {
            id: shard.client_id,
            map: PermutationMap::new(shard.entities.clone(), global_entities)?,
            num_relations: shard.num_relations(),
            train: shard.train.clone(),
            valid: shard.valid.clone(),
            test: shard.test.clone(),
            inputs: ClientInputs::from_shard(shard, cfg.dim)?,
            model,
            anchor: None,
            previous: None,
            filter: FilterIndex::new(shard.all_triples(), shard.num_relations()),
        })
    }

    pub fn num_entities(&self) -> usize {
        self.map.len()
    }

    fn negatives(&self, cfg: &TrainingConfig) -> usize {
        cfg.negatives.min(self.num_entities().saturating_sub(1))
    }

    /// `local_epochs` passes over the shuffled training queries, one Adam
    /// step per batch on every owned parameter.
    pub fn train_local(&mut self, cfg: &TrainingConfig, round: usize, rng: &mut Rng) -> Result<ClientDiagnostics, ProtoError> {
        let mut diag = ClientDiagnostics {
            client: self.id,
            ..Default::default()
        };
        if cfg.objective.uses_anchor() {
            self.anchor = Some(self.model.embedding_values(&self.inputs, rng)?[3].clone());
        }
        let mut queries = training_queries(&self.train, self.num_relations);
        let k = self.negatives(cfg);
        let mut loss_sum = 0.0;
        for _ in 0..cfg.local_epochs {
            rng.shuffle(&mut queries);
            for chunk in queries.chunks(cfg.batch_size) {
                let batch = CandidateBatch::sample(chunk, self.num_entities(), k, rng)?;
                let ctx = StepContext {
                    kind: cfg.objective,
                    weights: cfg.weights,
                    gamma: cfg.gamma,
                    anchor: self.anchor.as_ref(),
                    previous: self.previous.as_ref(),
                    frozen: None,
                };
                let mut tape = Tape::new();
                let report = self.model.step_loss(&mut tape, &self.inputs, &batch, &ctx, rng)?;
                let loss = tape.value(report.total).item();
                if !loss.is_finite() {
                    return Err(ProtoError::NonFinite {
                        client: self.id,
                        round,
                        detail: format!("{:?}", report.terms),
                    });
                }
                let grads = tape.backward(report.total)?;
                self.model.zero_grad();
                self.model.collect_grads(&tape, &grads);
                self.model.adam_step(&cfg.optimizer);
                loss_sum += loss;
                diag.steps += 1;
                diag.last_terms = report.terms.iter().map(|(n, v)| (n.to_string(), *v)).collect();
            }
        }
        if cfg.objective.uses_anchor() {
            self.previous = Some(self.model.embedding_values(&self.inputs, rng)?[3].clone());
        }
        diag.mean_loss = if diag.steps > 0 { loss_sum / diag.steps as f64 } else { 0.0 };
        Ok(diag)
    }

    /// Structure-only link prediction on the local structural and relation
    /// tables.
    pub fn train_structure(&mut self, cfg: &TrainingConfig, round: usize, rng: &mut Rng) -> Result<usize, ProtoError> {
        let mut queries = training_queries(&self.train, self.num_relations);
        let k = self.negatives(cfg);
        let mut steps = 0;
        for _ in 0..cfg.local_epochs {
            rng.shuffle(&mut queries);
            for chunk in queries.chunks(cfg.batch_size) {
                let batch = CandidateBatch::sample(chunk, self.num_entities(), k, rng)?;
                let mut tape = Tape::new();
                let ent = tape.param(&self.model.local.entity);
                let rel = tape.param(&self.model.relation);
                let loss = kgc_loss(&mut tape, ent, rel, &batch, cfg.gamma)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(ProtoError::NonFinite {
                        client: self.id,
                        round,
                        detail: "structure-only loss".into(),
                    });
                }
                let grads = tape.backward(loss)?;
                for p in [&mut self.model.local.entity, &mut self.model.relation] {
                    p.zero_grad();
                    p.collect_grad(&tape, &grads);
                    p.adam_step(&cfg.optimizer);
                }
                steps += 1;
            }
        }
        Ok(steps)
    }

    pub fn upload(&self, kind: UploadKind) -> Result<Upload, ProtoError> {
        let p = match kind {
            UploadKind::Local => &self.model.local,
            UploadKind::Replica => self
                .model
                .replica
                .as_ref()
                .ok_or_else(|| ProtoError::Config("replica upload without replica parameters".into()))?,
        };
        Ok(Upload {
            client_id: self.id,
            kind,
            entity: p.entity.value.clone(),
            visual: p.visual.value.clone(),
            textual: p.textual.value.clone(),
            train_triples: self.train.len(),
        })
    }

    /// Filtered ranking metrics over `triples` (local indices), with the
    /// client's imputed and fused embeddings.
    pub fn evaluate(&self, triples: &[Triple], gamma: f64, rng: &mut Rng) -> Result<RankingMetrics, ProtoError> {
        let [s, v, d, fused] = self.model.embedding_values(&self.inputs, rng)?;
        let rel = &self.model.relation.value;
        let fusion = &self.model.fusion;
        Ok(evaluate_with(self.num_relations, triples, &self.filter, |q| {
            fusion.query_scores((&s, &v, &d), &fused, rel, q, gamma)
        })?)
    }

    /// Parameter values in visiting order, for checkpoints.
    pub fn param_values(&self) -> Vec<Matrix> {
        let mut out = Vec::new();
        self.model.visit_params(&mut |p: &Param| out.push(p.value.clone()));
        out
    }

    pub fn set_param_values(&mut self, values: Vec<Matrix>) -> Result<(), ProtoError> {
        let mut shapes = Vec::new();
        self.model.visit_params(&mut |p| shapes.push(p.shape()));
        if shapes.len() != values.len() || shapes.iter().zip(&values).any(|(s, v)| *s != v.shape()) {
            return Err(ProtoError::Checkpoint(format!(
                "client {} expects {} parameters, got {}",
                self.id,
                shapes.len(),
                values.len()
            )));
        }
        let mut it = values.into_iter();
        self.model.visit_params_mut(&mut |p| {
            p.value = it.next().expect("count checked");
        });
        Ok(())
    }
}
