//! Pluggable imputers over hyper-modal rows: the diffusion imputer and the
//! reconstruction baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    drop_blocks, impute, masked_diffusion_loss_from, masked_mse, reverse_generate, DiffusionSchedule, HideError, ReconKind, ReconNet,
    ScheduleConfig,
};
use crate::numcore::{Matrix, Param, Parameterized, Rng, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputerKind {
    /// Padded features are used as they are.
    None,
    /// Masked diffusion with a reverse chain.
    #[default]
    Hide,
    /// One-shot bottleneck autoencoder.
    Ae,
    /// One-shot cascaded residual autoencoder.
    Cra,
    /// Forward and backward cascaded autoencoders; the backward output is used.
    Mmin,
}

impl ImputerKind {
    pub const ALL: [ImputerKind; 5] = [
        ImputerKind::None,
        ImputerKind::Hide,
        ImputerKind::Ae,
        ImputerKind::Cra,
        ImputerKind::Mmin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ImputerKind::None => "none",
            ImputerKind::Hide => "hide",
            ImputerKind::Ae => "ae",
            ImputerKind::Cra => "cra",
            ImputerKind::Mmin => "mmin",
        }
    }
}

impl fmt::Display for ImputerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImputerKind {
    type Err = HideError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ImputerKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HideError::Config(format!("unknown imputer {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImputerConfig {
    pub kind: ImputerKind,
    /// Reconstruction network of the diffusion imputer.
    pub network: ReconKind,
    pub schedule: ScheduleConfig,
    /// Step the reverse chain starts from; the last step when unset.
    pub chain_start: Option<usize>,
    /// Probability of hiding each observed modality block from the network
    /// input during training.
    pub drop_rate: f64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            kind: ImputerKind::Hide,
            network: ReconKind::Cra,
            schedule: ScheduleConfig::default(),
            chain_start: None,
            drop_rate: 0.5,
        }
    }
}

/// Imputed rows and, for learned imputers, the generated rows and the
/// reconstruction loss.
pub struct Imputed {
    pub rows: Var,
    pub generated: Option<Var>,
    pub loss: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct Imputer {
    kind: ImputerKind,
    nets: Vec<ReconNet>,
    schedule: Option<DiffusionSchedule>,
    chain_start: usize,
    drop_rate: f64,
}

impl Imputer {
    /// `width` is the hyper-modal row width, three times the embedding dim.
    pub fn new(cfg: &ImputerConfig, width: usize, rng: &mut Rng) -> Result<Self, HideError> {
        if !(0.0..1.0).contains(&cfg.drop_rate) {
            return Err(HideError::Config(format!("drop_rate must be in [0, 1), got {}", cfg.drop_rate)));
        }
        if width % 3 != 0 {
            return Err(HideError::Config(format!("hyper-modal width {width} is not a multiple of 3")));
        }
        let (nets, schedule) = match cfg.kind {
            ImputerKind::None => (vec![], None),
            ImputerKind::Hide => (
                vec![ReconNet::new(cfg.network, width, true, rng)?],
                Some(DiffusionSchedule::linear(&cfg.schedule)?),
            ),
            ImputerKind::Ae => (vec![ReconNet::new(ReconKind::Ae, width, false, rng)?], None),
            ImputerKind::Cra => (vec![ReconNet::new(ReconKind::Cra, width, false, rng)?], None),
            ImputerKind::Mmin => (
                vec![
                    ReconNet::new(ReconKind::Cra, width, false, rng)?,
                    ReconNet::new(ReconKind::Cra, width, false, rng)?,
                ],
                None,
            ),
        };
        let chain_start = match (&schedule, cfg.chain_start) {
            (Some(s), Some(t)) if t == 0 || t > s.steps() => return Err(HideError::Step { t, steps: s.steps() }),
            (Some(_), Some(t)) => t,
            (Some(s), None) => s.steps(),
            (None, _) => 0,
        };
        Ok(Self {
            kind: cfg.kind,
            nets,
            schedule,
            chain_start,
            drop_rate: cfg.drop_rate,
        })
    }

    pub fn kind(&self) -> ImputerKind {
        self.kind
    }

    pub fn is_active(&self) -> bool {
        self.kind != ImputerKind::None
    }

    /// Imputes the unobserved coordinates of `x0`. The learned parts see
    /// `x0` as a constant; observed coordinates keep their gradient path.
    pub fn apply(&self, tape: &mut Tape, x0: Var, mask: &Matrix, rng: &mut Rng) -> Result<Imputed, HideError> {
        let value = tape.value(x0).clone();
        self.apply_from(tape, x0, &value, mask, rng)
    }

    /// [`Imputer::apply`] with the network input and loss target taken from
    /// `source` instead of the value of `x0`.
    pub fn apply_from(
        &self,
        tape: &mut Tape,
        x0: Var,
        source: &Matrix,
        mask: &Matrix,
        rng: &mut Rng,
    ) -> Result<Imputed, HideError> {
        let value = source.clone();
        value.same_shape(mask)?;
        if tape.shape(x0) != value.shape() {
            return Err(HideError::Config(format!(
                "imputer source {:?} for rows {:?}",
                value.shape(),
                tape.shape(x0)
            )));
        }
        let (generated, loss) = match self.kind {
            ImputerKind::None => return Ok(Imputed {
                    rows: x0,
                    generated: None,
                    loss: None,
                }),
            ImputerKind::Hide => {
                let schedule = self.schedule.as_ref().expect("diffusion imputer has a schedule");
                let net = &self.nets[0];
                let dropped = self.dropped(&value, mask, rng)?;
                let loss = masked_diffusion_loss_from(tape, &dropped, &value, mask, net, schedule, rng)?;
                let gen = reverse_generate(tape, &value, net, schedule, self.chain_start, rng)?;
                (gen, loss)
            }
            ImputerKind::Ae | ImputerKind::Cra => {
                let net = &self.nets[0];
                let target = tape.constant(value.clone());
                let (pred, gen) = self.one_shot(tape, &value, mask, rng, |tape, x| net.forward(tape, x, None))?;
                (gen, masked_mse(tape, pred, target, mask)?)
            }
            ImputerKind::Mmin => {
                let (f, b) = (&self.nets[0], &self.nets[1]);
                let target = tape.constant(value.clone());
                let dropped = self.dropped(&value, mask, rng)?;
                let input = tape.constant(dropped);
                let forward = f.forward(tape, input, None)?;
                let backward = b.forward(tape, forward, None)?;
                let lf = masked_mse(tape, forward, target, mask)?;
                let lb = masked_mse(tape, backward, target, mask)?;
                let gen = if self.drop_rate > 0.0 {
                    let input = tape.constant(value);
                    let forward = f.forward(tape, input, None)?;
                    b.forward(tape, forward, None)?
                } else {
                    backward
                };
                (gen, tape.add(lf, lb)?)
            }
        };
        Ok(Imputed {
            rows: impute(tape, x0, generated, mask)?,
            generated: Some(generated),
            loss: Some(loss),
        })
    }

    fn dropped(&self, value: &Matrix, mask: &Matrix, rng: &mut Rng) -> Result<Matrix, HideError> {
        drop_blocks(value, mask, value.cols() / 3, self.drop_rate, rng)
    }

    /// Training prediction on the dropped input and, when blocks were
    /// dropped, a separate generation pass on the full input.
    fn one_shot(
        &self,
        tape: &mut Tape,
        value: &Matrix,
        mask: &Matrix,
        rng: &mut Rng,
        forward: impl Fn(&mut Tape, Var) -> Result<Var, HideError>,
    ) -> Result<(Var, Var), HideError> {
        let dropped = self.dropped(value, mask, rng)?;
        let input = tape.constant(dropped);
        let pred = forward(tape, input)?;
        if self.drop_rate == 0.0 {
            return Ok((pred, pred));
        }
        let input = tape.constant(value.clone());
        Ok((pred, forward(tape, input)?))
    }

    /// Imputation outside of training.
    pub fn impute_values(&self, x0: &Matrix, mask: &Matrix, rng: &mut Rng) -> Result<Matrix, HideError> {
        let mut tape = Tape::new();
        let x = tape.constant(x0.clone());
        let out = self.apply(&mut tape, x, mask, rng)?;
        Ok(tape.value(out.rows).clone())
    }
}

impl Parameterized for Imputer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for n in &self.nets {
            n.visit_params(f);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for n in &mut self.nets {
            n.visit_params_mut(f);
        }
    }
}
