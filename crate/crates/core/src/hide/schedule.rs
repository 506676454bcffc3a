use serde::{Deserialize, Serialize};

use super::HideError;
use crate::numcore::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Linear betas multiplied by `scale`.
    #[default]
    Scaled,
    /// Linear betas used as is.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_low: f64,
    pub beta_up: f64,
    pub scale: f64,
    pub mode: ScheduleMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            beta_low: 5e-4,
            beta_up: 5e-2,
            scale: 1e-4,
            mode: ScheduleMode::Scaled,
        }
    }
}

/// Noise schedule constants, indexed by step `t` in `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(cfg: &ScheduleConfig) -> Result<Self, HideError> {
        if cfg.steps == 0 {
            return Err(HideError::Config("diffusion needs at least one step".into()));
        }
        if !(cfg.beta_low > 0.0 && cfg.beta_low <= cfg.beta_up && cfg.beta_up < 1.0) {
            return Err(HideError::Config(format!(
                "need 0 < beta_low <= beta_up < 1, got {} and {}",
                cfg.beta_low, cfg.beta_up
            )));
        }
        let k = match cfg.mode {
            ScheduleMode::Scaled => cfg.scale,
            ScheduleMode::Raw => 1.0,
        };
        if !(k > 0.0 && k <= 1.0) {
            return Err(HideError::Config(format!("scale must be in (0, 1], got {k}")));
        }
        let t = cfg.steps;
        let betas = (0..t)
            .map(|i| {
                let frac = if t == 1 { 0.0 } else { i as f64 / (t - 1) as f64 };
                k * (cfg.beta_low + frac * (cfg.beta_up - cfg.beta_low))
            })
            .collect();
        Self::from_betas(betas)
    }

    /// A schedule from explicit betas in `[0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, HideError> {
        if betas.is_empty() || betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(HideError::Config(format!("betas must be non-empty and in [0, 1): {betas:?}")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<usize, HideError> {
        if t == 0 || t > self.steps() {
            return Err(HideError::Step { t, steps: self.steps() });
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64, HideError> {
        Ok(self.betas[self.check(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64, HideError> {
        Ok(1.0 - self.beta(t)?)
    }

    /// Cumulative product of alphas up to `t`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64, HideError> {
        if t == 0 {
            return Ok(1.0);
        }
        Ok(self.alpha_bars[self.check(t)?])
    }

    /// Forward-posterior variance; equals `beta_1` at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64, HideError> {
        let i = self.check(t)?;
        if i == 0 {
            return Ok(self.betas[0]);
        }
        let denom = 1.0 - self.alpha_bars[i];
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok((1.0 - self.alpha_bars[i - 1]) / denom * self.betas[i])
    }

    /// Coefficients `(c_x, c_0)` of the posterior mean
    /// `c_x * x_t + c_0 * x0_hat`.
    pub fn mean_coefficients(&self, t: usize) -> Result<(f64, f64), HideError> {
        let (ab, ab_prev, a, b) = (self.alpha_bar(t)?, self.alpha_bar(t - 1)?, self.alpha(t)?, self.beta(t)?);
        let denom = 1.0 - ab;
        if t == 1 || denom == 0.0 {
            return Ok((0.0, 1.0));
        }
        Ok((a.sqrt() * (1.0 - ab_prev) / denom, ab_prev.sqrt() * b / denom))
    }
}

/// `sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps`.
pub fn q_sample(x0: &Matrix, t: usize, eps: &Matrix, schedule: &DiffusionSchedule) -> Result<Matrix, HideError> {
    x0.same_shape(eps)?;
    let ab = schedule.alpha_bar(t)?;
    schedule.check(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + b * e)?)
}

/// [`q_sample`] with a separate step per row.
pub fn q_sample_rows(x0: &Matrix, steps: &[usize], eps: &Matrix, schedule: &DiffusionSchedule) -> Result<Matrix, HideError> {
    x0.same_shape(eps)?;
    if steps.len() != x0.rows() {
        return Err(HideError::Config(format!("{} steps for {} rows", steps.len(), x0.rows())));
    }
    let mut out = Matrix::zeros(x0.rows(), x0.cols());
    for (i, &t) in steps.iter().enumerate() {
        let ab = schedule.alpha_bar(t)?;
        schedule.check(t)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for ((o, x), e) in out.row_mut(i).iter_mut().zip(x0.row(i)).zip(eps.row(i)) {
            *o = a * x + b * e;
        }
    }
    Ok(out)
}
