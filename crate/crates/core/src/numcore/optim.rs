//! Trainable parameters and the Adam optimizer.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{Gradients, Matrix, Tape};

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)
}

/// A trainable matrix with its gradient and Adam moment estimates.
///
/// Every `Param` carries a process-unique id so a [`Tape`] can bind it once
/// per step. Cloning yields a new id.
#[derive(Debug)]
pub struct Param {
    id: u64,
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step_count: u64,
}

impl Clone for Param {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            value: self.value.clone(),
            grad: self.grad.clone(),
            adam_m: self.adam_m.clone(),
            adam_v: self.adam_v.clone(),
            step_count: self.step_count,
        }
    }
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            id: fresh_id(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Overwrites the value and clears optimizer state.
    pub fn reset(&mut self, value: Matrix) {
        assert_eq!(value.shape(), self.value.shape(), "reset with a different shape");
        self.value = value;
        self.adam_m.fill(0.0);
        self.adam_v.fill(0.0);
        self.step_count = 0;
        self.grad.fill(0.0);
    }

    /// Adds this parameter's gradient from a backward pass, if it was bound
    /// on `tape`.
    pub fn collect_grad(&mut self, tape: &Tape, grads: &Gradients) {
        if let Some(g) = tape.param_var(self).and_then(|v| grads.get(v)) {
            self.grad.add_assign(g);
        }
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step_count += 1;
        let (b1, b2) = cfg.betas;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let data = self.value.data_mut();
        let g = self.grad.data();
        let m = self.adam_m.data_mut();
        let v = self.adam_v.data_mut();
        for i in 0..data.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// Anything that owns trainable parameters.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn collect_grads(&mut self, tape: &Tape, grads: &Gradients) {
        self.visit_params_mut(&mut |p| p.collect_grad(tape, grads));
    }

    fn adam_step(&mut self, cfg: &AdamConfig) {
        self.visit_params_mut(&mut |p| p.adam_step(cfg));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}

impl Parameterized for Param {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(self)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(self)
    }
}

impl<T: Parameterized> Parameterized for Vec<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.iter().for_each(|p| p.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.iter_mut().for_each(|p| p.visit_params_mut(f));
    }
}

impl<T: Parameterized> Parameterized for Option<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        if let Some(p) = self {
            p.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if let Some(p) = self {
            p.visit_params_mut(f);
        }
    }
}
