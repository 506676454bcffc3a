//! Server state and the round loop.

use std::time::Instant;

use rayon::prelude::*;

use super::client::{ClientDiagnostics, ClientState, Upload, UploadKind};
use super::{aggregate_structural, aggregate_weights, count_weights, MetricRow, ProtoError, TrainingConfig};
use crate::dataset::{FederatedDataset, Triple};
use crate::kge::{aggregate_metrics, init_entities, RankingMetrics};
use crate::numcore::{Matrix, Rng};
use crate::objectives::{BranchParams, ModelDims};

/// Global structural table and modality projections.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub entity: Matrix,
    pub visual: Matrix,
    pub textual: Matrix,
    pub round: usize,
}

impl ServerState {
    pub fn init(entities: usize, dim: usize, visual_dim: usize, textual_dim: usize, gamma: f64, rng: &mut Rng) -> Self {
        let dims = ModelDims {
            entities: 0,
            relations: 0,
            dim,
            visual_dim,
            textual_dim,
        };
        let p = BranchParams::init(&dims, gamma, rng);
        Self {
            entity: init_entities(entities, dim, gamma, rng),
            visual: p.visual.value,
            textual: p.textual.value,
            round: 0,
        }
    }
}

fn overwrite(p: &mut BranchParams, rows: &Matrix, server: &ServerState) -> Result<(), ProtoError> {
    for (dst, src) in [(&mut p.entity, rows), (&mut p.visual, &server.visual), (&mut p.textual, &server.textual)] {
        if dst.shape() != src.shape() {
            return Err(ProtoError::Config(format!(
                "distributing {:?} into a {:?} parameter",
                src.shape(),
                dst.shape()
            )));
        }
        // Optimizer moments are kept across rounds.
        dst.value = src.clone();
    }
    Ok(())
}

/// Writes the client's slice of the global tables into its replica (when it
/// has one) and, unless `personal_locals` applies, into its local tables.
pub fn distribute(server: &ServerState, client: &mut ClientState, personal_locals: bool) -> Result<(), ProtoError> {
    let rows = client.map.gather(&server.entity)?;
    let has_replica = client.model.replica.is_some();
    if let Some(r) = client.model.replica.as_mut() {
        overwrite(r, &rows, server)?;
    }
    if !has_replica || !personal_locals {
        overwrite(&mut client.model.local, &rows, server)?;
    }
    Ok(())
}

/// Result of [`Federation::train_until_stop`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Round with the best aggregate validation MRR, if any round ran.
    pub best_round: Option<usize>,
    pub best_valid_mrr: f64,
    pub rounds_run: usize,
    pub stopped_early: bool,
    pub log: Vec<MetricRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Valid,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        }
    }
}

/// Server, clients and the configuration driving them.
#[derive(Clone, Debug)]
pub struct Federation {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub cfg: TrainingConfig,
    seed: u64,
}

impl Federation {
    pub fn new(data: &FederatedDataset, cfg: TrainingConfig, seed: u64) -> Result<Self, ProtoError> {
        cfg.validate()?;
        if data.clients.is_empty() {
            return Err(ProtoError::Config("no clients".into()));
        }
        let init = Rng::new(seed).substream("train").substream("init");
        let server = ServerState::init(
            data.entity_names.len(),
            cfg.dim,
            data.visual_dim,
            data.textual_dim,
            cfg.gamma,
            &mut init.substream("server"),
        );
        let clients = data
            .clients
            .iter()
            .map(|shard| {
                let mut rng = init.substream(&format!("client{}", shard.client_id));
                ClientState::new(shard, data.entity_names.len(), &cfg, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut fed = Self {
            server,
            clients,
            cfg,
            seed,
        };
        for c in &mut fed.clients {
            distribute(&fed.server, c, false)?;
        }
        Ok(fed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, name: &str) -> Rng {
        Rng::new(self.seed).substream(name)
    }

    fn sample_clients(&self, rng: &mut Rng) -> Vec<bool> {
        let n = self.clients.len();
        let k = ((self.cfg.client_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut chosen = vec![false; n];
        for i in rng.sample_distinct(n, k) {
            chosen[i] = true;
        }
        chosen
    }

    /// One round: distribute, local training, upload, aggregate.
    pub fn run_round(&mut self) -> Result<Vec<ClientDiagnostics>, ProtoError> {
        self.server.round += 1;
        let round = self.server.round;
        if self.cfg.frozen {
            return Ok(Vec::new());
        }
        let round_rng = self.stream("train").substream(&format!("round{round}"));
        let chosen = self.sample_clients(&mut round_rng.substream("sample"));
        let cfg = &self.cfg;
        let server = &self.server;
        let work = |(i, c): (usize, &mut ClientState)| -> Option<Result<ClientDiagnostics, ProtoError>> {
            if !chosen[i] {
                return None;
            }
            let mut rng = round_rng.substream(&format!("client{}", c.id));
            Some(distribute(server, c, cfg.personal_locals).and_then(|_| c.train_local(cfg, round, &mut rng)))
        };
        let diags: Vec<_> = if cfg.parallel {
            self.clients.par_iter_mut().enumerate().filter_map(work).collect()
        } else {
            self.clients.iter_mut().enumerate().filter_map(work).collect()
        };
        let diags = diags.into_iter().collect::<Result<Vec<_>, _>>()?;
        let kind = if cfg.objective.uses_replica() { UploadKind::Replica } else { UploadKind::Local };
        let uploads = self
            .clients
            .iter()
            .zip(&chosen)
            .filter(|(_, &on)| on)
            .map(|(c, _)| c.upload(kind))
            .collect::<Result<Vec<_>, _>>()?;
        self.aggregate(&uploads)?;
        Ok(diags)
    }

    /// Existence-weighted structural mean and train-count-weighted
    /// projection mean over `uploads`.
    pub fn aggregate(&mut self, uploads: &[Upload]) -> Result<(), ProtoError> {
        let pairs = uploads
            .iter()
            .map(|u| {
                let c = self
                    .clients
                    .iter()
                    .find(|c| c.id == u.client_id)
                    .ok_or_else(|| ProtoError::Config(format!("upload from unknown client {}", u.client_id)))?;
                Ok((&c.map, &u.entity))
            })
            .collect::<Result<Vec<_>, ProtoError>>()?;
        aggregate_structural(&mut self.server.entity, &pairs)?;
        let alpha = count_weights(&uploads.iter().map(|u| u.train_triples).collect::<Vec<_>>())?;
        let vis: Vec<&Matrix> = uploads.iter().map(|u| &u.visual).collect();
        let txt: Vec<&Matrix> = uploads.iter().map(|u| &u.textual).collect();
        self.server.visual = aggregate_weights(&vis, &alpha)?;
        self.server.textual = aggregate_weights(&txt, &alpha)?;
        Ok(())
    }

    /// Per-client metrics and their test-count-weighted aggregate.
    pub fn evaluate(&self, split: SplitKind) -> Result<(Vec<RankingMetrics>, RankingMetrics), ProtoError> {
        let eval = self.stream("eval");
        let per = self
            .clients
            .iter()
            .map(|c| {
                let triples: &[Triple] = match split {
                    SplitKind::Valid => &c.valid,
                    SplitKind::Test => &c.test,
                };
                c.evaluate(triples, self.cfg.gamma, &mut eval.substream(&format!("client{}", c.id)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let agg = aggregate_metrics(&per)?;
        Ok((per, agg))
    }

    /// Metric rows of one evaluation, clients first, then the aggregate.
    pub fn metric_rows(&self, split: SplitKind, round: usize, wall_seconds: f64) -> Result<Vec<MetricRow>, ProtoError> {
        let (per, agg) = self.evaluate(split)?;
        let mut rows: Vec<MetricRow> = self
            .clients
            .iter()
            .zip(&per)
            .map(|(c, m)| MetricRow::new(round, c.id.to_string(), split.name(), m, wall_seconds))
            .collect();
        rows.push(MetricRow::new(round, "aggregate", split.name(), &agg, wall_seconds));
        Ok(rows)
    }

    /// Structure-only rounds: local link prediction on the structural and
    /// relation tables, then structural aggregation.
    pub fn warmstart_structural(&mut self, rounds: usize) -> Result<(), ProtoError> {
        for r in 1..=rounds {
            let rng = self.stream("warmstart").substream(&format!("round{r}"));
            let cfg = &self.cfg;
            let server = &self.server;
            let work = |c: &mut ClientState| -> Result<(), ProtoError> {
                c.model.local.entity.value = c.map.gather(&server.entity)?;
                c.train_structure(cfg, r, &mut rng.substream(&format!("client{}", c.id)))?;
                Ok(())
            };
            if cfg.parallel {
                self.clients.par_iter_mut().try_for_each(work)?;
            } else {
                self.clients.iter_mut().try_for_each(work)?;
            }
            let ups: Vec<_> = self.clients.iter().map(|c| (&c.map, &c.model.local.entity.value)).collect();
            aggregate_structural(&mut self.server.entity, &ups)?;
        }
        if rounds > 0 {
            for c in &mut self.clients {
                distribute(&self.server, c, false)?;
            }
        }
        Ok(())
    }

    /// Rounds until `rounds` or until `patience` consecutive rounds fail to
    /// improve the aggregate validation MRR. The best round's state is
    /// restored and its test metrics close the log.
    pub fn train_until_stop(&mut self, mut on_row: impl FnMut(&MetricRow)) -> Result<TrainOutcome, ProtoError> {
        let start = Instant::now();
        if self.cfg.warmstart_rounds > 0 {
            self.warmstart_structural(self.cfg.warmstart_rounds)?;
        }
        let mut log = Vec::new();
        let mut best: Option<(usize, f64, Box<(ServerState, Vec<ClientState>)>)> = None;
        let mut stale = 0;
        let mut rounds_run = 0;
        let mut stopped_early = false;
        for _ in 0..self.cfg.rounds {
            self.run_round()?;
            rounds_run += 1;
            let round = self.server.round;
            let rows = self.metric_rows(SplitKind::Valid, round, start.elapsed().as_secs_f64())?;
            let mrr = rows.last().expect("aggregate row").mrr;
            for r in &rows {
                on_row(r);
            }
            log.extend(rows);
            if best.as_ref().is_none_or(|(_, b, _)| mrr > *b) {
                best = Some((round, mrr, Box::new((self.server.clone(), self.clients.clone()))));
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        let (best_round, best_valid_mrr) = match best {
            Some((round, mrr, state)) => {
                let (server, clients) = *state;
                self.server = server;
                self.clients = clients;
                let rows = self.metric_rows(SplitKind::Test, round, start.elapsed().as_secs_f64())?;
                for r in &rows {
                    on_row(r);
                }
                log.extend(rows);
                (Some(round), mrr)
            }
            None => (None, 0.0),
        };
        Ok(TrainOutcome {
            best_round,
            best_valid_mrr,
            rounds_run,
            stopped_early,
            log,
        })
    }
}
