//! The client's trainable model: structural table, modality projections,
//! relation table, fusion, imputer and optional global replicas.

use super::{
    branch_log_probs, contrastive, feature_distill, kgc_from_log_probs, proximal, LossReport,
    ObjectiveError, ObjectiveKind, StepContext,
};
use crate::dataset::ClientShard;
use crate::fusion::{Fusion, FusionKind};
use crate::hide::{hyper_mask, split_views, Imputer, ImputerConfig};
use crate::kge::{init_entities, init_relations, CandidateBatch};
use crate::numcore::{kl_rows, Matrix, Param, Parameterized, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub entities: usize,
    pub relations: usize,
    pub dim: usize,
    pub visual_dim: usize,
    pub textual_dim: usize,
}

/// A structural table with the two modality projections.
#[derive(Clone, Debug)]
pub struct BranchParams {
    pub entity: Param,
    pub visual: Param,
    pub textual: Param,
}

impl BranchParams {
    pub fn init(dims: &ModelDims, gamma: f64, rng: &mut Rng) -> Self {
        // Projected rows start at the scale of the structural rows for
        // unit-variance features.
        let scale = gamma / dims.dim as f64 / 3f64.sqrt();
        let proj = |n: usize, rng: &mut Rng| Param::new(rng.normal_matrix(n, dims.dim, scale / (n.max(1) as f64).sqrt()));
        Self {
            entity: Param::new(init_entities(dims.entities, dims.dim, gamma, rng)),
            visual: proj(dims.visual_dim, rng),
            textual: proj(dims.textual_dim, rng),
        }
    }

    pub fn copy_values_from(&mut self, other: &BranchParams) {
        self.entity.reset(other.entity.value.clone());
        self.visual.reset(other.visual.value.clone());
        self.textual.reset(other.textual.value.clone());
    }
}

impl Parameterized for BranchParams {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.entity);
        f(&self.visual);
        f(&self.textual);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.entity);
        f(&mut self.visual);
        f(&mut self.textual);
    }
}

/// Raw modality features of a client with the hyper-modal availability mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientInputs {
    pub visual: Matrix,
    pub textual: Matrix,
    pub mask: Matrix,
}

impl ClientInputs {
    pub fn from_shard(shard: &ClientShard, dim: usize) -> Result<Self, ObjectiveError> {
        Ok(Self {
            visual: shard.visual.clone(),
            textual: shard.textual.clone(),
            mask: hyper_mask(&shard.mask_visual, &shard.mask_textual, dim)?,
        })
    }
}

/// Stop-gradient values of one step, captured so that finite differences
/// can hold them fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct Frozen {
    pub imputer_source: Matrix,
    pub client_teacher: Matrix,
    pub server_teacher: Option<Matrix>,
}

/// One branch's `(S, V, D)` views after imputation.
pub struct Branch {
    pub views: (Var, Var, Var),
    pub generated: Option<Var>,
    pub imputer_loss: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct ClientModel {
    pub local: BranchParams,
    pub relation: Param,
    pub fusion: Fusion,
    pub imputer: Imputer,
    pub replica: Option<BranchParams>,
    dims: ModelDims,
}

impl ClientModel {
    /// With `replica`, the replica starts as a copy of the locals.
    pub fn new(
        dims: ModelDims,
        fusion: FusionKind,
        imputer: &ImputerConfig,
        replica: bool,
        gamma: f64,
        rng: &mut Rng,
    ) -> Result<Self, ObjectiveError> {
        if dims.dim == 0 || dims.dim % 2 != 0 {
            return Err(ObjectiveError::Config(format!("embedding dim must be even and positive, got {}", dims.dim)));
        }
        let local = BranchParams::init(&dims, gamma, rng);
        let relation = Param::new(init_relations(dims.relations, dims.dim, rng));
        let fusion = Fusion::new(fusion, dims.dim, dims.relations, rng);
        let imputer = Imputer::new(imputer, 3 * dims.dim, rng)?;
        let replica = replica.then(|| local.clone());
        Ok(Self {
            local,
            relation,
            fusion,
            imputer,
            replica,
            dims,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    fn hyper_rows(&self, tape: &mut Tape, p: &BranchParams, inputs: &ClientInputs) -> Result<Var, ObjectiveError> {
        let s = tape.param(&p.entity);
        let (fv, fd) = (tape.constant(inputs.visual.clone()), tape.constant(inputs.textual.clone()));
        let (wv, wd) = (tape.param(&p.visual), tape.param(&p.textual));
        let v = tape.matmul(fv, wv)?;
        let d = tape.matmul(fd, wd)?;
        Ok(tape.concat_cols(&[s, v, d])?)
    }

    /// Local views with imputed missing slots and the imputer loss.
    pub fn local_branch(&self, tape: &mut Tape, inputs: &ClientInputs, rng: &mut Rng) -> Result<Branch, ObjectiveError> {
        self.local_branch_from(tape, inputs, None, rng)
    }

    /// [`ClientModel::local_branch`] with the imputer reading `source`
    /// instead of the current hyper-modal rows.
    pub fn local_branch_from(
        &self,
        tape: &mut Tape,
        inputs: &ClientInputs,
        source: Option<&Matrix>,
        rng: &mut Rng,
    ) -> Result<Branch, ObjectiveError> {
        let x0 = self.hyper_rows(tape, &self.local, inputs)?;
        let out = match source {
            Some(src) => self.imputer.apply_from(tape, x0, src, &inputs.mask, rng)?,
            None => self.imputer.apply(tape, x0, &inputs.mask, rng)?,
        };
        Ok(Branch {
            views: split_views(tape, out.rows, self.dims.dim),
            generated: out.generated,
            imputer_loss: out.loss,
        })
    }

    /// Replica views over the available modalities only. Missing slots
    /// keep their padded features; nothing is imputed on this side.
    pub fn replica_branch(&self, tape: &mut Tape, inputs: &ClientInputs) -> Result<Branch, ObjectiveError> {
        let p = self
            .replica
            .as_ref()
            .ok_or_else(|| ObjectiveError::Missing("global replica parameters".into()))?;
        let x = self.hyper_rows(tape, p, inputs)?;
        Ok(Branch {
            views: split_views(tape, x, self.dims.dim),
            generated: None,
            imputer_loss: None,
        })
    }

    /// Imputed local views and the fused table, off the tape.
    pub fn embedding_values(&self, inputs: &ClientInputs, rng: &mut Rng) -> Result<[Matrix; 4], ObjectiveError> {
        let mut tape = Tape::new();
        let b = self.local_branch(&mut tape, inputs, rng)?;
        let (s, v, d) = b.views;
        let e = self.fusion.fuse(&mut tape, s, v, d)?;
        Ok([s, v, d, e].map(|x| tape.value(x).clone()))
    }

    /// The objective of one training step.
    pub fn step_loss(
        &self,
        tape: &mut Tape,
        inputs: &ClientInputs,
        batch: &CandidateBatch,
        ctx: &StepContext<'_>,
        rng: &mut Rng,
    ) -> Result<LossReport, ObjectiveError> {
        let w = &ctx.weights;
        let mut terms = Vec::new();
        let local = self.local_branch_from(tape, inputs, ctx.frozen.map(|f| &f.imputer_source), rng)?;
        let rel = tape.param(&self.relation);
        let lp_c = branch_log_probs(tape, &self.fusion, local.views, rel, batch, ctx.gamma)?;
        let kgc_c = kgc_from_log_probs(tape, lp_c)?;
        terms.push(("kgc", tape.value(kgc_c).item()));
        let mut total = kgc_c;

        let mut add = |tape: &mut Tape, name: &'static str, weight: f64, term: Var, total: &mut Var| -> Result<(), ObjectiveError> {
            terms.push((name, tape.value(term).item()));
            let t = if weight == 1.0 { term } else { tape.scale(term, weight) };
            *total = tape.add(*total, t)?;
            Ok(())
        };

        if let Some(di) = local.imputer_loss {
            if w.lambda > 0.0 {
                add(tape, "imputer", w.lambda, di, &mut total)?;
            }
        }

        match ctx.kind {
            ObjectiveKind::FedE => {}
            ObjectiveKind::FedEc | ObjectiveKind::FedProx => {
                let anchor = ctx
                    .anchor
                    .ok_or_else(|| ObjectiveError::Missing("global snapshot of the round".into()))?;
                let rows = batch.entities();
                let (s, v, d) = local.views;
                let fused = self.fusion.fuse(tape, s, v, d)?;
                let cur = tape.gather_rows(fused, &rows)?;
                let anchor = anchor.gather_rows(&rows);
                if ctx.kind == ObjectiveKind::FedProx {
                    if w.rho > 0.0 {
                        let p = proximal(tape, cur, &anchor, 1.0)?;
                        add(tape, "proximal", w.rho, p, &mut total)?;
                    }
                } else if w.mu > 0.0 {
                    let previous = ctx.previous.map(|p| p.gather_rows(&rows)).unwrap_or_else(|| anchor.clone());
                    let c = contrastive(tape, cur, &anchor, &previous, w.tau)?;
                    add(tape, "contrastive", w.mu, c, &mut total)?;
                }
            }
            ObjectiveKind::FedLu | ObjectiveKind::FeD3 => {
                let server = self.replica_branch(tape, inputs)?;
                let lp_s = branch_log_probs(tape, &self.fusion, server.views, rel, batch, ctx.gamma)?;
                let kgc_s = kgc_from_log_probs(tape, lp_s)?;
                add(tape, "kgc_server", 1.0, kgc_s, &mut total)?;
                if w.mu > 0.0 {
                    let (teacher_c, teacher_s) = match ctx.frozen {
                        Some(f) => {
                            let s = f
                                .server_teacher
                                .as_ref()
                                .ok_or_else(|| ObjectiveError::Missing("frozen server distribution".into()))?;
                            (tape.constant(f.client_teacher.clone()), tape.constant(s.clone()))
                        }
                        None => (lp_c, lp_s),
                    };
                    let s2c = kl_rows(tape, teacher_s, lp_c)?;
                    if ctx.kind == ObjectiveKind::FedLu {
                        add(tape, "distill_s2c", w.mu, s2c, &mut total)?;
                    } else {
                        let c2s = kl_rows(tape, teacher_c, lp_s)?;
                        let both = tape.add(c2s, s2c)?;
                        add(tape, "distill_logit", w.mu, both, &mut total)?;
                    }
                }
                if ctx.kind == ObjectiveKind::FeD3 && w.eta > 0.0 {
                    let rows = batch.entities();
                    let (s, v, d) = local.views;
                    let fc = self.fusion.fuse(tape, s, v, d)?;
                    let (s, v, d) = server.views;
                    let fs = self.fusion.fuse(tape, s, v, d)?;
                    let a = tape.gather_rows(fc, &rows)?;
                    let b = tape.gather_rows(fs, &rows)?;
                    let fd = feature_distill(tape, a, b)?;
                    add(tape, "distill_feature", w.eta, fd, &mut total)?;
                }
            }
        }
        Ok(LossReport { total, terms })
    }

    /// The values [`ClientModel::step_loss`] treats as constants, at the
    /// current parameters. `rng` must be in the state the step will see.
    pub fn freeze(&self, inputs: &ClientInputs, batch: &CandidateBatch, gamma: f64, rng: &mut Rng) -> Result<Frozen, ObjectiveError> {
        let mut tape = Tape::new();
        let x0 = self.hyper_rows(&mut tape, &self.local, inputs)?;
        let imputer_source = tape.value(x0).clone();
        let local = self.local_branch(&mut tape, inputs, rng)?;
        let rel = tape.param(&self.relation);
        let lp_c = branch_log_probs(&mut tape, &self.fusion, local.views, rel, batch, gamma)?;
        let server_teacher = match self.replica {
            Some(_) => {
                let server = self.replica_branch(&mut tape, inputs)?;
                let lp_s = branch_log_probs(&mut tape, &self.fusion, server.views, rel, batch, gamma)?;
                Some(tape.value(lp_s).clone())
            }
            None => None,
        };
        Ok(Frozen {
            imputer_source,
            client_teacher: tape.value(lp_c).clone(),
            server_teacher,
        })
    }

    /// Copies the local structural table and projections into the replica.
    pub fn sync_replica(&mut self) {
        if let Some(r) = &mut self.replica {
            r.copy_values_from(&self.local);
        }
    }
}

impl Parameterized for ClientModel {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.local.visit_params(f);
        f(&self.relation);
        self.fusion.visit_params(f);
        self.imputer.visit_params(f);
        self.replica.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.local.visit_params_mut(f);
        f(&mut self.relation);
        self.fusion.visit_params_mut(f);
        self.imputer.visit_params_mut(f);
        self.replica.visit_params_mut(f);
    }
}
