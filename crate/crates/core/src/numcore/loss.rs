//! Softmax cross-entropy and KL divergence, both as plain functions over
//! logit vectors and as row-wise tape compositions.

use super::{NumError, Tape, Var};

/// Value and gradient of a scalar loss with respect to one logit vector.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

fn check_finite(v: &[f64], what: &str) -> Result<(), NumError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NumError::NonFinite(what.into()))
    }
}

/// `-log softmax(logits)[target]`, gradient with respect to the logits.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<VectorLoss, NumError> {
    if logits.is_empty() || target >= logits.len() {
        return Err(NumError::Index {
            index: target,
            len: logits.len(),
        });
    }
    check_finite(logits, "logits")?;
    let lp = log_softmax(logits);
    let mut grad: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
    grad[target] -= 1.0;
    Ok(VectorLoss {
        value: -lp[target],
        grad,
    })
}

/// `KL(softmax(teacher) || softmax(student))`. The teacher is treated as a
/// constant, so the gradient is with respect to the student logits only.
pub fn kl_div(teacher: &[f64], student: &[f64]) -> Result<VectorLoss, NumError> {
    if teacher.len() != student.len() {
        return Err(NumError::Dimension(format!(
            "kl_div over {} and {} logits",
            teacher.len(),
            student.len()
        )));
    }
    check_finite(teacher, "teacher logits")?;
    check_finite(student, "student logits")?;
    let lt = log_softmax(teacher);
    let ls = log_softmax(student);
    let value = lt
        .iter()
        .zip(&ls)
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0);
    let grad = ls.iter().zip(&lt).map(|(s, t)| s.exp() - t.exp()).collect();
    Ok(VectorLoss { value, grad })
}

/// Mean over rows of `-log_probs[i, target[i]]`, where `log_probs` already
/// holds row-wise log-probabilities.
pub fn nll_rows(tape: &mut Tape, log_probs: Var, targets: &[usize]) -> Result<Var, NumError> {
    let picked = tape.pick_cols(log_probs, targets)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// Mean over rows of softmax cross-entropy of `logits` at `targets`.
pub fn xent_rows(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var, NumError> {
    let lp = tape.log_softmax_rows(logits);
    nll_rows(tape, lp, targets)
}

/// Mean over rows of `KL(p_teacher || p_student)` given row-wise
/// log-probabilities. The teacher side is detached.
pub fn kl_rows(tape: &mut Tape, teacher_log_probs: Var, student_log_probs: Var) -> Result<Var, NumError> {
    let t = tape.detach(teacher_log_probs);
    let p = tape.value(t).map(f64::exp);
    let rows = tape.shape(t).0.max(1) as f64;
    let p = tape.constant(p);
    let diff = tape.sub(t, student_log_probs)?;
    let w = tape.mul(p, diff)?;
    let s = tape.sum(w);
    Ok(tape.scale(s, 1.0 / rows))
}
