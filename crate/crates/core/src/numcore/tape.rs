//! Tape-based reverse-mode differentiation over matrices.
//!
//! Every loss in the crate is assembled on a [`Tape`]: leaves are created
//! from [`Param`]s (or constants), operations append nodes, and
//! [`Tape::backward`] walks the nodes in reverse accumulating gradients.
//! The tape is rebuilt for every optimization step.

use std::collections::HashMap;

use super::matrix::{matmul_a_bt_into, matmul_at_b_into};
use super::{Matrix, NumError, Param};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    RowScale(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Select(Matrix, Var, Var),
    LogSoftmaxRows(Var),
    SoftmaxRows(Var),
    PickCols(Var, Vec<usize>),
    RowDot(Var, Var),
    RowNormalize(Var),
    Rotate(Box<RotateOp>),
}

#[derive(Debug)]
struct RotateOp {
    ent: Var,
    rel: Var,
    heads: Vec<usize>,
    rels: Vec<usize>,
    cands: Vec<usize>,
    k: usize,
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Index lists describing a batch of phase-rotation scoring queries.
///
/// Query `i` scores head `heads[i]` under relation row `rels[i]` against the
/// `k` candidate tails `cands[i*k .. (i+1)*k]`.
#[derive(Clone, Debug)]
pub struct RotateQuery<'a> {
    pub heads: &'a [usize],
    pub rels: &'a [usize],
    pub cands: &'a [usize],
    pub k: usize,
    pub gamma: f64,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<u64, Var>,
}

fn dim_err(what: &str, a: (usize, usize), b: (usize, usize)) -> NumError {
    NumError::Dimension(format!("{what}: {a:?} vs {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A trainable leaf bound to `p`. Binding the same parameter twice on one
    /// tape returns the same node.
    pub fn param(&mut self, p: &Param) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.push(p.value.clone(), Op::Leaf, true);
        self.params.insert(p.id(), v);
        v
    }

    /// The node bound to `p`, if it was used on this tape.
    pub fn param_var(&self, p: &Param) -> Option<Var> {
        self.params.get(&p.id()).copied()
    }

    /// A leaf that tracks gradients but is not tied to a [`Param`].
    pub fn variable(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A gradient-free copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let m = self.value(v).clone();
        self.constant(m)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (r, c) = self.shape(a);
        if self.shape(bias) != (1, c) {
            return Err(dim_err("add_row", (r, c), self.shape(bias)));
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..r {
            for (x, y) in value.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(value, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).scale(k);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    /// `s * a` where `s` is a `1 x 1` node.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var, NumError> {
        if self.shape(s) != (1, 1) {
            return Err(dim_err("scale_by expects a scalar", self.shape(s), (1, 1)));
        }
        let k = self.value(s).item();
        let value = self.value(a).scale(k);
        let ng = self.ng(s) || self.ng(a);
        Ok(self.push(value, Op::ScaleBy(s, a), ng))
    }

    /// Multiplies row `i` of `a` by `s[i]`, where `s` is `n x 1`.
    pub fn row_scale(&mut self, a: Var, s: Var) -> Result<Var, NumError> {
        let (r, _) = self.shape(a);
        if self.shape(s) != (r, 1) {
            return Err(dim_err("row_scale", self.shape(a), self.shape(s)));
        }
        let mut value = self.value(a).clone();
        for i in 0..r {
            let k = self.value(s).get(i, 0);
            value.row_mut(i).iter_mut().for_each(|x| *x *= k);
        }
        let ng = self.ng(a) || self.ng(s);
        Ok(self.push(value, Op::RowScale(a, s), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(value, Op::Ln(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let mats: Vec<&Matrix> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Matrix::concat_cols(&mats)?;
        let ng = parts.iter().any(|&v| self.ng(v));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_cols(start, end);
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let rows = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(NumError::Index {
                index: bad,
                len: rows,
            });
        }
        let value = self.value(a).gather_rows(idx);
        let ng = self.ng(a);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Elementwise `mask != 0 ? a : b`. The selected values are copied, not
    /// recomputed, so kept entries are bit-identical to their source.
    pub fn select(&mut self, mask: &Matrix, a: Var, b: Var) -> Result<Var, NumError> {
        mask.same_shape(self.value(a))?;
        mask.same_shape(self.value(b))?;
        let value = Matrix::from_vec(
            mask.rows(),
            mask.cols(),
            mask.data()
                .iter()
                .zip(self.value(a).data().iter().zip(self.value(b).data()))
                .map(|(&m, (&x, &y))| if m != 0.0 { x } else { y })
                .collect(),
        )?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Select(mask.clone(), a, b), ng))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a));
        let ng = self.ng(a);
        self.push(value, Op::LogSoftmaxRows(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = log_softmax_rows(self.value(a)).map(f64::exp);
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// `out[i] = a[i, idx[i]]`, an `n x 1` column.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let (r, c) = self.shape(a);
        if idx.len() != r {
            return Err(dim_err("pick_cols", (r, c), (idx.len(), 1)));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(NumError::Index { index: bad, len: c });
        }
        let data = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| self.value(a).get(i, j))
            .collect();
        let value = Matrix::from_vec(r, 1, data)?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::PickCols(a, idx.to_vec()), ng))
    }

    /// Row-wise dot products, an `n x 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.value(a).same_shape(self.value(b))?;
        let (r, _) = self.shape(a);
        let data = (0..r)
            .map(|i| {
                self.value(a)
                    .row(i)
                    .iter()
                    .zip(self.value(b).row(i))
                    .map(|(x, y)| x * y)
                    .sum()
            })
            .collect();
        let value = Matrix::from_vec(r, 1, data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::RowDot(a, b), ng))
    }

    /// Scales each row to unit L2 norm (rows with norm below `1e-12` are left
    /// scaled by `1e12`).
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let n = row_norm(value.row(i));
            value.row_mut(i).iter_mut().for_each(|x| *x /= n);
        }
        let ng = self.ng(a);
        self.push(value, Op::RowNormalize(a), ng)
    }

    /// Phase-rotation scores `gamma - ||h o e^{i theta} - t||_2` for a batch
    /// of queries, as a `B x k` matrix.
    ///
    /// `ent` rows hold `d/2` real parts followed by `d/2` imaginary parts;
    /// `rel` rows hold `d/2` phases.
    pub fn rotate_scores(&mut self, ent: Var, rel: Var, q: &RotateQuery<'_>) -> Result<Var, NumError> {
        let (n_ent, d) = self.shape(ent);
        let (n_rel, half) = self.shape(rel);
        if d % 2 != 0 || d / 2 != half {
            return Err(dim_err("rotate_scores entity/relation widths", (n_ent, d), (n_rel, half)));
        }
        let b = q.heads.len();
        if q.rels.len() != b || q.cands.len() != b * q.k {
            return Err(NumError::Dimension(format!(
                "rotate_scores: {b} heads, {} relations, {} candidates for k={}",
                q.rels.len(),
                q.cands.len(),
                q.k
            )));
        }
        for (&i, len) in q
            .heads
            .iter()
            .map(|h| (h, n_ent))
            .chain(q.cands.iter().map(|c| (c, n_ent)))
            .chain(q.rels.iter().map(|r| (r, n_rel)))
        {
            if i >= len {
                return Err(NumError::Index { index: i, len });
            }
        }
        let e = self.value(ent);
        let r = self.value(rel);
        let mut out = Matrix::zeros(b, q.k);
        let mut rot = vec![0.0; d];
        for i in 0..b {
            rotate_into(e.row(q.heads[i]), r.row(q.rels[i]), &mut rot);
            for j in 0..q.k {
                let t = e.row(q.cands[i * q.k + j]);
                let dist: f64 = rot
                    .iter()
                    .zip(t)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                out.set(i, j, q.gamma - dist);
            }
        }
        let ng = self.ng(ent) || self.ng(rel);
        let op = RotateOp {
            ent,
            rel,
            heads: q.heads.to_vec(),
            rels: q.rels.to_vec(),
            cands: q.cands.to_vec(),
            k: q.k,
        };
        Ok(self.push(out, Op::Rotate(Box::new(op)), ng))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        if self.shape(loss) != (1, 1) {
            return Err(dim_err("backward expects a scalar loss", self.shape(loss), (1, 1)));
        }
        if !self.value(loss).is_finite() {
            return Err(NumError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce(&mut Matrix)) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let (r, c) = self.shape(v);
            *slot = Some(Matrix::zeros(r, c));
        }
        f(slot.as_mut().expect("initialized above"));
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accum(grads, *a, |ga| matmul_a_bt_into(g.data(), bv, ga.data_mut(), m, n, k));
                self.accum(grads, *b, |gb| matmul_at_b_into(av, g.data(), gb.data_mut(), m, k, n));
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *b, |gb| gb.add_assign(g));
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *b, |gb| gb.add_scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |ga| {
                    for ((x, &gi), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *x += gi * y;
                    }
                });
                self.accum(grads, *b, |gb| {
                    for ((x, &gi), &y) in gb.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *x += gi * y;
                    }
                });
            }
            Op::AddRow(a, bias) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *bias, |gb| {
                    for i in 0..g.rows() {
                        for (x, y) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Scale(a, k) => self.accum(grads, *a, |ga| ga.add_scaled(g, *k)),
            Op::ScaleBy(s, a) => {
                let k = self.value(*s).item();
                let av = self.value(*a);
                self.accum(grads, *s, |gs| {
                    gs.data_mut()[0] += g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum::<f64>();
                });
                self.accum(grads, *a, |ga| ga.add_scaled(g, k));
            }
            Op::RowScale(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s));
                self.accum(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        let k = sv.get(i, 0);
                        for (x, y) in ga.row_mut(i).iter_mut().zip(g.row(i)) {
                            *x += k * y;
                        }
                    }
                });
                self.accum(grads, *s, |gs| {
                    for i in 0..g.rows() {
                        let d: f64 = g.row(i).iter().zip(av.row(i)).map(|(x, y)| x * y).sum();
                        gs.data_mut()[i] += d;
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, |ga| {
                    for ((x, &gi), &v) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        if v > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = &node.value;
                self.accum(grads, *a, |ga| {
                    for ((x, &gi), &s) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += gi * s * (1.0 - s);
                    }
                });
            }
            Op::Exp(a) => {
                let out = &node.value;
                self.accum(grads, *a, |ga| {
                    for ((x, &gi), &e) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += gi * e;
                    }
                });
            }
            Op::Ln(a) => {
                let av = self.value(*a);
                self.accum(grads, *a, |ga| {
                    for ((x, &gi), &v) in ga.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *x += gi / v;
                    }
                });
            }
            Op::SumAll(a) => {
                let k = g.item();
                self.accum(grads, *a, |ga| ga.data_mut().iter_mut().for_each(|x| *x += k));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.accum(grads, p, |gp| {
                        for i in 0..g.rows() {
                            for (x, y) in gp.row_mut(i).iter_mut().zip(&g.row(i)[off..off + w]) {
                                *x += y;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let w = g.cols();
                self.accum(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        for (x, y) in ga.row_mut(i)[*start..*start + w].iter_mut().zip(g.row(i)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                self.accum(grads, *a, |ga| {
                    for (o, &i) in idx.iter().enumerate() {
                        for (x, y) in ga.row_mut(i).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                });
            }
            Op::Select(mask, a, b) => {
                self.accum(grads, *a, |ga| {
                    for ((x, &gi), &m) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                        if m != 0.0 {
                            *x += gi;
                        }
                    }
                });
                self.accum(grads, *b, |gb| {
                    for ((x, &gi), &m) in gb.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                        if m == 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                // d/dx_j = g_j - softmax_j * sum(g)
                let out = &node.value;
                self.accum(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        let gs: f64 = g.row(i).iter().sum();
                        for ((x, &gi), &lp) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(out.row(i)) {
                            *x += gi - lp.exp() * gs;
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let out = &node.value;
                self.accum(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        let dot: f64 = g.row(i).iter().zip(out.row(i)).map(|(x, y)| x * y).sum();
                        for ((x, &gi), &p) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(out.row(i)) {
                            *x += p * (gi - dot);
                        }
                    }
                });
            }
            Op::PickCols(a, idx) => {
                self.accum(grads, *a, |ga| {
                    for (i, &j) in idx.iter().enumerate() {
                        let c = ga.cols();
                        ga.data_mut()[i * c + j] += g.get(i, 0);
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        let k = g.get(i, 0);
                        for (x, y) in ga.row_mut(i).iter_mut().zip(bv.row(i)) {
                            *x += k * y;
                        }
                    }
                });
                self.accum(grads, *b, |gb| {
                    for i in 0..g.rows() {
                        let k = g.get(i, 0);
                        for (x, y) in gb.row_mut(i).iter_mut().zip(av.row(i)) {
                            *x += k * y;
                        }
                    }
                });
            }
            Op::RowNormalize(a) => {
                // y = x / n; dy/dx applied to g: (g - y (y.g)) / n
                let (av, out) = (self.value(*a), &node.value);
                self.accum(grads, *a, |ga| {
                    for i in 0..g.rows() {
                        let n = row_norm(av.row(i));
                        let yg: f64 = out.row(i).iter().zip(g.row(i)).map(|(y, gi)| y * gi).sum();
                        for ((x, &gi), &y) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(out.row(i)) {
                            *x += (gi - y * yg) / n;
                        }
                    }
                });
            }
            Op::Rotate(op) => self.rotate_backward(op, g, grads),
        }
    }

    fn rotate_backward(&self, op: &RotateOp, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let e = self.value(op.ent);
        let r = self.value(op.rel);
        let d = e.cols();
        let half = d / 2;
        let mut ge = self.ng(op.ent).then(|| Matrix::zeros(e.rows(), d));
        let mut gr = self.ng(op.rel).then(|| Matrix::zeros(r.rows(), half));
        let mut rot = vec![0.0; d];
        let mut grot = vec![0.0; d];
        for i in 0..op.heads.len() {
            let h = e.row(op.heads[i]);
            let phase = r.row(op.rels[i]);
            rotate_into(h, phase, &mut rot);
            grot.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..op.k {
                let gij = g.get(i, j);
                if gij == 0.0 {
                    continue;
                }
                let ti = op.cands[i * op.k + j];
                let t = e.row(ti);
                let dist: f64 = rot.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                if dist == 0.0 {
                    continue;
                }
                // score = gamma - dist; d score / d u = -u / dist with u = rot - t
                let k = -gij / dist;
                for c in 0..d {
                    let du = k * (rot[c] - t[c]);
                    grot[c] += du;
                    if let Some(ge) = ge.as_mut() {
                        ge.data_mut()[ti * d + c] -= du;
                    }
                }
            }
            // rot_re = hr cos - hi sin ; rot_im = hr sin + hi cos
            for c in 0..half {
                let (cos, sin) = (phase[c].cos(), phase[c].sin());
                let (gre, gim) = (grot[c], grot[half + c]);
                if let Some(ge) = ge.as_mut() {
                    let base = op.heads[i] * d;
                    ge.data_mut()[base + c] += gre * cos + gim * sin;
                    ge.data_mut()[base + half + c] += -gre * sin + gim * cos;
                }
                if let Some(gr) = gr.as_mut() {
                    // d rot_re / d theta = -rot_im ; d rot_im / d theta = rot_re
                    gr.data_mut()[op.rels[i] * half + c] += -gre * rot[half + c] + gim * rot[c];
                }
            }
        }
        if let Some(ge) = ge {
            self.accum(grads, op.ent, |x| x.add_assign(&ge));
        }
        if let Some(gr) = gr {
            self.accum(grads, op.rel, |x| x.add_assign(&gr));
        }
    }
}

/// Complex elementwise product of `h` (re halves then im halves) with
/// `exp(i * phase)`.
pub(crate) fn rotate_into(h: &[f64], phase: &[f64], out: &mut [f64]) {
    let half = phase.len();
    for c in 0..half {
        let (cos, sin) = (phase[c].cos(), phase[c].sin());
        let (re, im) = (h[c], h[half + c]);
        out[c] = re * cos - im * sin;
        out[half + c] = re * sin + im * cos;
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable row-wise log-softmax.
pub fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|x| *x -= lse);
    }
    out
}
