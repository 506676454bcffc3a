//! Reconstruction networks over hyper-modal rows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HideError;
use crate::numcore::{Matrix, Param, Parameterized, Rng, Tape, Var};

/// Width of the sinusoidal step embedding appended to the network input.
pub const STEP_EMBED_DIM: usize = 16;

/// Scale of the output layer at init, so residual nets start near identity.
const OUTPUT_INIT_STD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    /// Three cascaded residual autoencoder blocks.
    #[default]
    Cra,
    /// A single bottleneck autoencoder without skip connection.
    Ae,
    /// Residual two-hidden-layer perceptron of full width.
    Mlp,
    /// Residual multi-head attention over the three modality blocks.
    Mha,
}

impl ReconKind {
    pub const ALL: [ReconKind; 4] = [ReconKind::Cra, ReconKind::Ae, ReconKind::Mlp, ReconKind::Mha];

    pub fn name(self) -> &'static str {
        match self {
            ReconKind::Cra => "cra",
            ReconKind::Ae => "ae",
            ReconKind::Mlp => "mlp",
            ReconKind::Mha => "mha",
        }
    }
}

impl fmt::Display for ReconKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReconKind {
    type Err = HideError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReconKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HideError::Config(format!("unknown reconstruction network {s:?}")))
    }
}

/// Sinusoidal embedding of step `t`, `STEP_EMBED_DIM` wide.
pub fn step_embedding(t: usize) -> Vec<f64> {
    let half = STEP_EMBED_DIM / 2;
    let mut out = Vec::with_capacity(STEP_EMBED_DIM);
    for i in 0..half {
        let freq = 1.0 / 10_000f64.powf(i as f64 / half as f64);
        let a = t as f64 * freq;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    fn new(inputs: usize, outputs: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            weight: Param::new(rng.normal_matrix(inputs, outputs, std)),
            bias: Param::new(Matrix::zeros(1, outputs)),
        }
    }

    fn he(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self::new(inputs, outputs, (2.0 / inputs.max(1) as f64).sqrt(), rng)
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, HideError> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }
}

impl Parameterized for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Linear layers with ReLU between them (not after the last).
fn stack(tape: &mut Tape, layers: &[Linear], mut x: Var) -> Result<Var, HideError> {
    for (i, l) in layers.iter().enumerate() {
        x = l.forward(tape, x)?;
        if i + 1 < layers.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Encoder `in -> w/2 -> w/4`, mirrored decoder `-> w/2 -> out`.
fn bottleneck(inputs: usize, width: usize, small_output: bool, rng: &mut Rng) -> Vec<Linear> {
    let h1 = width.div_ceil(2);
    let h2 = width.div_ceil(4);
    let last = if small_output {
        Linear::new(h1, width, OUTPUT_INIT_STD, rng)
    } else {
        Linear::he(h1, width, rng)
    };
    vec![Linear::he(inputs, h1, rng), Linear::he(h1, h2, rng), Linear::he(h2, h1, rng), last]
}

#[derive(Clone, Debug)]
struct Attention {
    heads: usize,
    step: Option<Linear>,
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
}

#[derive(Clone, Debug)]
enum Body {
    Cra(Vec<Vec<Linear>>),
    Ae(Vec<Linear>),
    Mlp(Vec<Linear>),
    Mha(Box<Attention>),
}

/// Maps `width`-wide rows (optionally with a step) to `width`-wide rows.
#[derive(Clone, Debug)]
pub struct ReconNet {
    kind: ReconKind,
    width: usize,
    step_conditioned: bool,
    body: Body,
}

impl ReconNet {
    /// `width` must be a multiple of 3 for the attention variant, which
    /// treats each row as three modality tokens.
    pub fn new(kind: ReconKind, width: usize, step_conditioned: bool, rng: &mut Rng) -> Result<Self, HideError> {
        if width == 0 {
            return Err(HideError::Config("network width must be positive".into()));
        }
        let inputs = width + if step_conditioned { STEP_EMBED_DIM } else { 0 };
        let body = match kind {
            ReconKind::Cra => Body::Cra((0..3).map(|_| bottleneck(inputs, width, true, rng)).collect()),
            ReconKind::Ae => Body::Ae(bottleneck(inputs, width, false, rng)),
            ReconKind::Mlp => Body::Mlp(vec![
                Linear::he(inputs, width, rng),
                Linear::he(width, width, rng),
                Linear::new(width, width, OUTPUT_INIT_STD, rng),
            ]),
            ReconKind::Mha => {
                if width % 3 != 0 {
                    return Err(HideError::Config(format!("attention needs width divisible by 3, got {width}")));
                }
                let d = width / 3;
                let heads = if d % 2 == 0 { 2 } else { 1 };
                let xavier = (1.0 / d as f64).sqrt();
                Body::Mha(Box::new(Attention {
                    heads,
                    step: step_conditioned.then(|| Linear::new(STEP_EMBED_DIM, d, xavier, rng)),
                    query: Linear::new(d, d, xavier, rng),
                    key: Linear::new(d, d, xavier, rng),
                    value: Linear::new(d, d, xavier, rng),
                    output: Linear::new(d, d, OUTPUT_INIT_STD, rng),
                }))
            }
        };
        Ok(Self {
            kind,
            width,
            step_conditioned,
            body,
        })
    }

    pub fn kind(&self) -> ReconKind {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn step_conditioned(&self) -> bool {
        self.step_conditioned
    }

    /// Forward pass; `steps` gives one diffusion step per row and is
    /// required exactly when the net is step-conditioned.
    pub fn forward(&self, tape: &mut Tape, x: Var, steps: Option<&[usize]>) -> Result<Var, HideError> {
        let (n, w) = tape.shape(x);
        if w != self.width {
            return Err(HideError::Config(format!("net width {} got {w} columns", self.width)));
        }
        let emb = match (self.step_conditioned, steps) {
            (true, Some(s)) if s.len() == n => {
                let mut m = Matrix::zeros(n, STEP_EMBED_DIM);
                for (i, &t) in s.iter().enumerate() {
                    m.row_mut(i).copy_from_slice(&step_embedding(t));
                }
                Some(tape.constant(m))
            }
            (false, None) => None,
            _ => {
                return Err(HideError::Config(format!(
                    "step-conditioned {} with steps {:?} for {n} rows",
                    self.step_conditioned,
                    steps.map(<[usize]>::len)
                )))
            }
        };
        let with_emb = |tape: &mut Tape, h: Var| -> Result<Var, HideError> {
            Ok(match emb {
                Some(e) => tape.concat_cols(&[h, e])?,
                None => h,
            })
        };
        match &self.body {
            Body::Cra(blocks) => {
                let mut h = x;
                for b in blocks {
                    let inp = with_emb(tape, h)?;
                    let r = stack(tape, b, inp)?;
                    h = tape.add(h, r)?;
                }
                Ok(h)
            }
            Body::Ae(layers) => {
                let inp = with_emb(tape, x)?;
                stack(tape, layers, inp)
            }
            Body::Mlp(layers) => {
                let inp = with_emb(tape, x)?;
                let r = stack(tape, layers, inp)?;
                Ok(tape.add(x, r)?)
            }
            Body::Mha(att) => att.forward(tape, x, emb),
        }
    }
}

impl Attention {
    fn forward(&self, tape: &mut Tape, x: Var, emb: Option<Var>) -> Result<Var, HideError> {
        let d = tape.shape(x).1 / 3;
        let step = match (&self.step, emb) {
            (Some(l), Some(e)) => Some(l.forward(tape, e)?),
            _ => None,
        };
        let mut tokens = Vec::with_capacity(3);
        for m in 0..3 {
            let tok = tape.slice_cols(x, m * d, (m + 1) * d);
            tokens.push(match step {
                Some(s) => tape.add(tok, s)?,
                None => tok,
            });
        }
        let project = |tape: &mut Tape, l: &Linear| -> Result<Vec<Var>, HideError> {
            tokens.iter().map(|&t| l.forward(tape, t)).collect()
        };
        let q = project(tape, &self.query)?;
        let k = project(tape, &self.key)?;
        let v = project(tape, &self.value)?;
        let dh = d / self.heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(3);
        for (i, &qi) in q.iter().enumerate() {
            let mut head_outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (a, b) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(qi, a, b);
                let mut logits = Vec::with_capacity(3);
                for &kj in &k {
                    let kh = tape.slice_cols(kj, a, b);
                    let dot = tape.row_dot(qh, kh)?;
                    logits.push(tape.scale(dot, inv_sqrt));
                }
                let logits = tape.concat_cols(&logits)?;
                let attn = tape.softmax_rows(logits);
                let mut acc = None;
                for (j, &vj) in v.iter().enumerate() {
                    let vh = tape.slice_cols(vj, a, b);
                    let w = tape.slice_cols(attn, j, j + 1);
                    let term = tape.row_scale(vh, w)?;
                    acc = Some(match acc {
                        None => term,
                        Some(s) => tape.add(s, term)?,
                    });
                }
                head_outs.push(acc.expect("three keys"));
            }
            let mixed = tape.concat_cols(&head_outs)?;
            let o = self.output.forward(tape, mixed)?;
            let tok = tape.slice_cols(x, i * d, (i + 1) * d);
            outs.push(tape.add(tok, o)?);
        }
        Ok(tape.concat_cols(&outs)?)
    }
}

impl Parameterized for Attention {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        if let Some(s) = &self.step {
            s.visit_params(f);
        }
        for l in [&self.query, &self.key, &self.value, &self.output] {
            l.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Some(s) = &mut self.step {
            s.visit_params_mut(f);
        }
        for l in [&mut self.query, &mut self.key, &mut self.value, &mut self.output] {
            l.visit_params_mut(f);
        }
    }
}

impl Parameterized for ReconNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        match &self.body {
            Body::Cra(blocks) => blocks.visit_params(f),
            Body::Ae(l) | Body::Mlp(l) => l.visit_params(f),
            Body::Mha(a) => a.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match &mut self.body {
            Body::Cra(blocks) => blocks.visit_params_mut(f),
            Body::Ae(l) | Body::Mlp(l) => l.visit_params_mut(f),
            Body::Mha(a) => a.visit_params_mut(f),
        }
    }
}
