//! Hyper-modal rows, the masked diffusion objective, the reverse chain and
//! the observed-coordinate merge.

use super::{q_sample, q_sample_rows, DiffusionSchedule, HideError, ReconNet};
use crate::dataset::ModalityMask;
use crate::numcore::{Matrix, Rng, Tape, Var};

/// `[S | V | D]` per entity with its availability mask. The structural block
/// is always observed.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperModal {
    pub x0: Matrix,
    pub mask: Matrix,
    pub dim: usize,
}

/// Availability of `[S | V | D]` as an `n x 3 dim` binary matrix.
pub fn hyper_mask(visual: &ModalityMask, textual: &ModalityMask, dim: usize) -> Result<Matrix, HideError> {
    let n = visual.available.len();
    if textual.available.len() != n {
        return Err(HideError::Config(format!(
            "mask lengths {n} and {} differ",
            textual.available.len()
        )));
    }
    let mut m = Matrix::zeros(n, 3 * dim);
    for i in 0..n {
        let row = m.row_mut(i);
        row[..dim].fill(1.0);
        if visual.available[i] {
            row[dim..2 * dim].fill(1.0);
        }
        if textual.available[i] {
            row[2 * dim..].fill(1.0);
        }
    }
    Ok(m)
}

pub fn build_hypermodal(
    s: &Matrix,
    v: &Matrix,
    d: &Matrix,
    visual: &ModalityMask,
    textual: &ModalityMask,
) -> Result<HyperModal, HideError> {
    let dim = s.cols();
    if v.shape() != s.shape() || d.shape() != s.shape() || visual.available.len() != s.rows() {
        return Err(HideError::Config(format!(
            "hyper-modal blocks {:?}, {:?}, {:?} with {} mask rows",
            s.shape(),
            v.shape(),
            d.shape(),
            visual.available.len()
        )));
    }
    Ok(HyperModal {
        x0: Matrix::concat_cols(&[s, v, d])?,
        mask: hyper_mask(visual, textual, dim)?,
        dim,
    })
}

/// Sum of squared masked differences divided by the number of observed
/// coordinates (zero when nothing is observed).
pub fn masked_mse(tape: &mut Tape, pred: Var, target: Var, mask: &Matrix) -> Result<Var, HideError> {
    let observed = mask.sum();
    let m = tape.constant(mask.clone());
    let diff = tape.sub(pred, target)?;
    let md = tape.mul(m, diff)?;
    let sq = tape.mul(md, md)?;
    let total = tape.sum(sq);
    Ok(tape.scale(total, if observed > 0.0 { 1.0 / observed } else { 0.0 }))
}

/// One draw of the masked denoising objective: a uniform step per row,
/// Gaussian noise, and the masked error of the reconstruction of `x0`.
pub fn masked_diffusion_loss(
    tape: &mut Tape,
    x0: &Matrix,
    mask: &Matrix,
    net: &ReconNet,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<Var, HideError> {
    masked_diffusion_loss_from(tape, x0, x0, mask, net, schedule, rng)
}

/// [`masked_diffusion_loss`] with the chain noising `input` while the
/// reconstruction is scored against `x0`.
pub fn masked_diffusion_loss_from(
    tape: &mut Tape,
    input: &Matrix,
    x0: &Matrix,
    mask: &Matrix,
    net: &ReconNet,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<Var, HideError> {
    x0.same_shape(mask)?;
    x0.same_shape(input)?;
    let steps: Vec<usize> = (0..x0.rows()).map(|_| 1 + rng.below(schedule.steps())).collect();
    let eps = rng.normal_matrix(x0.rows(), x0.cols(), 1.0);
    let xt = q_sample_rows(input, &steps, &eps, schedule)?;
    let xt = tape.constant(xt);
    let pred = net.forward(tape, xt, Some(&steps))?;
    let target = tape.constant(x0.clone());
    masked_mse(tape, pred, target, mask)
}

/// Copy of `x` with each observed modality block (every block after the
/// structural one) zeroed with probability `rate`. Zeroed blocks stay in
/// the loss mask, so the network learns to fill them from the rest of the
/// row.
pub fn drop_blocks(x: &Matrix, mask: &Matrix, dim: usize, rate: f64, rng: &mut Rng) -> Result<Matrix, HideError> {
    x.same_shape(mask)?;
    if dim == 0 || x.cols() % dim != 0 {
        return Err(HideError::Config(format!("row width {} is not a multiple of {dim}", x.cols())));
    }
    let mut out = x.clone();
    if rate <= 0.0 {
        return Ok(out);
    }
    for i in 0..x.rows() {
        for b in 1..x.cols() / dim {
            if mask.row(i)[b * dim] != 0.0 && rng.bernoulli(rate) {
                out.row_mut(i)[b * dim..(b + 1) * dim].fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Mean-only reverse chain from step `start`, returning the reconstruction
/// at step 1.
///
/// The chain up to `x_1` runs off the tape; only the final reconstruction
/// is recorded, so gradients reach the network through its last call.
pub fn reverse_generate(
    tape: &mut Tape,
    x0: &Matrix,
    net: &ReconNet,
    schedule: &DiffusionSchedule,
    start: usize,
    rng: &mut Rng,
) -> Result<Var, HideError> {
    let eps = rng.normal_matrix(x0.rows(), x0.cols(), 1.0);
    let mut x = q_sample(x0, start, &eps, schedule)?;
    let n = x0.rows();
    for t in (2..=start).rev() {
        let mut scratch = Tape::new();
        let xv = scratch.constant(x.clone());
        let out = net.forward(&mut scratch, xv, Some(&vec![t; n]))?;
        let (cx, c0) = schedule.mean_coefficients(t)?;
        x = x.zip_map(scratch.value(out), |xt, x0_hat| cx * xt + c0 * x0_hat)?;
    }
    let xv = tape.constant(x);
    net.forward(tape, xv, Some(&vec![1; n]))
}

/// Observed coordinates from `x0`, the rest from `generated`.
pub fn impute(tape: &mut Tape, x0: Var, generated: Var, mask: &Matrix) -> Result<Var, HideError> {
    Ok(tape.select(mask, x0, generated)?)
}

pub fn impute_values(x0: &Matrix, generated: &Matrix, mask: &Matrix) -> Result<Matrix, HideError> {
    x0.same_shape(generated)?;
    x0.same_shape(mask)?;
    let mut out = x0.clone();
    for ((o, &g), &m) in out.data_mut().iter_mut().zip(generated.data()).zip(mask.data()) {
        if m == 0.0 {
            *o = g;
        }
    }
    Ok(out)
}

/// The structural, visual and textual blocks of hyper-modal rows.
pub fn split_views(tape: &mut Tape, x: Var, dim: usize) -> (Var, Var, Var) {
    (
        tape.slice_cols(x, 0, dim),
        tape.slice_cols(x, dim, 2 * dim),
        tape.slice_cols(x, 2 * dim, 3 * dim),
    )
}
