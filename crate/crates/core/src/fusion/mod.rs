//! Fusion of structural, visual and textual entity embeddings.
//!
//! Four kinds produce one fused table `E` that is scored by the rotation
//! decoder. `Split` instead scores each modality against its own relation
//! table and averages the three candidate distributions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kge::{init_relations, score_all_tails, score_candidates, CandidateBatch, KgeError, Query};
use crate::numcore::{softmax, Matrix, NumError, Param, Parameterized, Rng, Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Average,
    #[default]
    Weighted,
    Concat,
    Split,
    Gated,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Average,
        FusionKind::Weighted,
        FusionKind::Concat,
        FusionKind::Split,
        FusionKind::Gated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Average => "average",
            FusionKind::Weighted => "weighted",
            FusionKind::Concat => "concat",
            FusionKind::Split => "split",
            FusionKind::Gated => "gated",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FusionError::Config(format!("unknown fusion kind {s:?}")))
    }
}

/// Gate matrices for one non-structural modality: the output map, the gate
/// map applied to the structural embedding, and the input map.
#[derive(Clone, Debug)]
pub struct Gate {
    pub output: Param,
    pub gate: Param,
    pub input: Param,
}

impl Parameterized for Gate {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.output);
        f(&self.gate);
        f(&self.input);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.output);
        f(&mut self.gate);
        f(&mut self.input);
    }
}

/// A fusion function and its trainable parameters.
#[derive(Clone, Debug)]
pub struct Fusion {
    kind: FusionKind,
    dim: usize,
    /// Weighted: pre-softmax logits over (structure, visual, textual).
    pub weights: Option<Param>,
    /// Concat: `3d x d` projection of `[S | V | D]`.
    pub projection: Option<Param>,
    /// Gated: visual then textual gates.
    pub gates: Vec<Gate>,
    /// Split: visual then textual relation tables.
    pub modal_relations: Vec<Param>,
}

impl Fusion {
    pub fn new(kind: FusionKind, dim: usize, n_rel: usize, rng: &mut Rng) -> Self {
        let mut f = Fusion {
            kind,
            dim,
            weights: None,
            projection: None,
            gates: Vec::new(),
            modal_relations: Vec::new(),
        };
        let noise = 0.01;
        match kind {
            FusionKind::Average => {}
            FusionKind::Weighted => f.weights = Some(Param::new(Matrix::zeros(1, 3))),
            FusionKind::Concat => {
                let mut p = rng.normal_matrix(3 * dim, dim, noise);
                for b in 0..3 {
                    for i in 0..dim {
                        let x = p.get(b * dim + i, i) + 1.0 / 3.0;
                        p.set(b * dim + i, i, x);
                    }
                }
                f.projection = Some(Param::new(p));
            }
            FusionKind::Gated => {
                for _ in 0..2 {
                    let near = |rng: &mut Rng, k: f64| {
                        let mut m = rng.normal_matrix(dim, dim, noise);
                        m.add_assign(&Matrix::identity(dim).scale(k));
                        Param::new(m)
                    };
                    f.gates.push(Gate {
                        output: near(rng, 2.0),
                        gate: Param::new(rng.normal_matrix(dim, dim, noise)),
                        input: near(rng, 1.0),
                    });
                }
            }
            FusionKind::Split => {
                for _ in 0..2 {
                    f.modal_relations.push(Param::new(init_relations(n_rel, dim, rng)));
                }
            }
        }
        f
    }

    pub fn kind(&self) -> FusionKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Softmax-normalized modality weights, for the weighted kind.
    pub fn modality_weights(&self) -> Option<Vec<f64>> {
        self.weights.as_ref().map(|w| softmax(w.value.data()))
    }

    /// The fused table `E`. For `Split` this is the plain average, used
    /// wherever a single entity representation is needed.
    pub fn fuse(&self, tape: &mut Tape, s: Var, v: Var, d: Var) -> Result<Var, FusionError> {
        let shape = tape.shape(s);
        if tape.shape(v) != shape || tape.shape(d) != shape || shape.1 != self.dim {
            return Err(NumError::Dimension(format!(
                "fuse: S {shape:?}, V {:?}, D {:?}, width {}",
                tape.shape(v),
                tape.shape(d),
                self.dim
            ))
            .into());
        }
        match self.kind {
            FusionKind::Average | FusionKind::Split => average(tape, &[s, v, d]),
            FusionKind::Weighted => {
                let w = tape.param(self.weights.as_ref().expect("weighted fusion has weights"));
                let w = tape.softmax_rows(w);
                let mut acc = None;
                for (i, x) in [s, v, d].into_iter().enumerate() {
                    let wi = tape.slice_cols(w, i, i + 1);
                    let term = tape.scale_by(wi, x)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term)?,
                    });
                }
                Ok(acc.expect("three terms"))
            }
            FusionKind::Concat => {
                let p = tape.param(self.projection.as_ref().expect("concat fusion has a projection"));
                let cat = tape.concat_cols(&[s, v, d])?;
                Ok(tape.matmul(cat, p)?)
            }
            FusionKind::Gated => {
                let mut parts = vec![s];
                for (x, g) in [v, d].into_iter().zip(&self.gates) {
                    let w_gate = tape.param(&g.gate);
                    let w_in = tape.param(&g.input);
                    let w_out = tape.param(&g.output);
                    let pre = tape.matmul(s, w_gate)?;
                    let gate = tape.sigmoid(pre);
                    let inner = tape.matmul(x, w_in)?;
                    let gated = tape.mul(gate, inner)?;
                    parts.push(tape.matmul(gated, w_out)?);
                }
                average(tape, &parts)
            }
        }
    }

    /// Row-wise log-probabilities over each query's candidate set.
    pub fn log_probs(
        &self,
        tape: &mut Tape,
        (s, v, d): (Var, Var, Var),
        rel: Var,
        batch: &CandidateBatch,
        gamma: f64,
    ) -> Result<Var, FusionError> {
        if self.kind != FusionKind::Split {
            let e = self.fuse(tape, s, v, d)?;
            let scores = score_candidates(tape, e, rel, batch, gamma)?;
            return Ok(tape.log_softmax_rows(scores));
        }
        if self.modal_relations.len() != 2 {
            return Err(FusionError::Config("split fusion needs visual and textual relation tables".into()));
        }
        let rv = tape.param(&self.modal_relations[0]);
        let rd = tape.param(&self.modal_relations[1]);
        let mut probs = Vec::with_capacity(3);
        for (x, r) in [(s, rel), (v, rv), (d, rd)] {
            let scores = score_candidates(tape, x, r, batch, gamma)?;
            probs.push(tape.softmax_rows(scores));
        }
        let mean = average(tape, &probs)?;
        Ok(tape.ln(mean))
    }

    /// One score per entity for evaluation; higher ranks first.
    ///
    /// `fused` must be the output of [`Fusion::fuse`] on the same tables.
    /// Split ranks by the log of its averaged distribution over all entities.
    pub fn query_scores(&self, tables: (&Matrix, &Matrix, &Matrix), fused: &Matrix, rel: &Matrix, q: &Query, gamma: f64) -> Vec<f64> {
        if self.kind != FusionKind::Split {
            return score_all_tails(fused, rel, q.head, q.relation_row, gamma);
        }
        let (s, v, d) = tables;
        let rels = [rel, &self.modal_relations[0].value, &self.modal_relations[1].value];
        split_predict(q, [s, v, d], rels, gamma)
            .into_iter()
            .map(f64::ln)
            .collect()
    }

    /// [`Fusion::fuse`] on plain matrices.
    pub fn fuse_values(&self, s: &Matrix, v: &Matrix, d: &Matrix) -> Result<Matrix, FusionError> {
        let mut tape = Tape::new();
        let (s, v, d) = (tape.constant(s.clone()), tape.constant(v.clone()), tape.constant(d.clone()));
        let e = self.fuse(&mut tape, s, v, d)?;
        Ok(tape.value(e).clone())
    }
}

impl Parameterized for Fusion {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.weights.visit_params(f);
        self.projection.visit_params(f);
        self.gates.visit_params(f);
        self.modal_relations.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.weights.visit_params_mut(f);
        self.projection.visit_params_mut(f);
        self.gates.visit_params_mut(f);
        self.modal_relations.visit_params_mut(f);
    }
}

fn average(tape: &mut Tape, xs: &[Var]) -> Result<Var, FusionError> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = tape.add(acc, x)?;
    }
    Ok(tape.scale(acc, 1.0 / xs.len() as f64))
}

/// Average of the three per-modality tail distributions of `q` over all
/// entities, each table scored against its own relation table.
pub fn split_predict(q: &Query, tables: [&Matrix; 3], relations: [&Matrix; 3], gamma: f64) -> Vec<f64> {
    let n = tables[0].rows();
    let mut p = vec![0.0; n];
    for (x, r) in tables.into_iter().zip(relations) {
        let sm = softmax(&score_all_tails(x, r, q.head, q.relation_row, gamma));
        for (a, b) in p.iter_mut().zip(sm) {
            *a += b / 3.0;
        }
    }
    p
}
