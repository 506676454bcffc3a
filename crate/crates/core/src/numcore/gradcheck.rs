//! Finite-difference validation of tape gradients.

use super::{NumError, Param, Parameterized, Tape, Var};

const GRAD_FLOOR: f64 = 1e-6;

/// Largest coordinate-wise relative error between the tape gradient of
/// `loss` and central finite differences over every parameter of `model`.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, 1e-6)`.
/// The floor keeps finite-difference rounding on vanishing gradients from
/// dominating.
/// `loss` is called repeatedly and must be a deterministic function of the
/// model's parameter values.
pub fn grad_check_model<M, E, F>(model: &mut M, mut loss: F, h: f64) -> Result<f64, E>
where
    M: Parameterized,
    E: From<NumError>,
    F: FnMut(&M, &mut Tape) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let out = loss(model, &mut tape)?;
    let grads = tape.backward(out)?;
    model.zero_grad();
    model.collect_grads(&tape, &grads);

    let mut analytic = Vec::new();
    model.visit_params(&mut |p| analytic.push(p.grad.clone()));

    let mut eval = |m: &M| -> Result<f64, E> {
        let mut t = Tape::new();
        let v = loss(m, &mut t)?;
        let x = t.value(v).item();
        if !x.is_finite() {
            return Err(NumError::NonFinite("loss during finite differencing".into()).into());
        }
        Ok(x)
    };

    let mut worst = 0.0f64;
    for (pi, ana) in analytic.iter().enumerate() {
        for ci in 0..ana.len() {
            let orig = nth_param_value(model, pi, ci);
            set_nth_param_value(model, pi, ci, orig + h);
            let plus = eval(model)?;
            set_nth_param_value(model, pi, ci, orig - h);
            let minus = eval(model)?;
            set_nth_param_value(model, pi, ci, orig);
            let num = (plus - minus) / (2.0 * h);
            let a = ana.data()[ci];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn nth_param_value<M: Parameterized>(model: &M, pi: usize, ci: usize) -> f64 {
    let mut i = 0;
    let mut out = 0.0;
    model.visit_params(&mut |p| {
        if i == pi {
            out = p.value.data()[ci];
        }
        i += 1;
    });
    out
}

fn set_nth_param_value<M: Parameterized>(model: &mut M, pi: usize, ci: usize, v: f64) {
    let mut i = 0;
    model.visit_params_mut(&mut |p| {
        if i == pi {
            p.value.data_mut()[ci] = v;
        }
        i += 1;
    });
}

/// [`grad_check_model`] for a loss of a single parameter.
pub fn grad_check<F>(loss: F, p: &mut Param, h: f64) -> Result<f64, NumError>
where
    F: FnMut(&Param, &mut Tape) -> Result<Var, NumError>,
{
    grad_check_model(p, loss, h)
}
