//! First-order parameter updates.

use serde::{Deserialize, Serialize};

use super::{Gradient, Weights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// `theta +/-= lr * g`.
    Plain,
    /// `theta +/-= lr * g / sqrt(ms + epsilon)` with
    /// `ms = decay * ms + (1 - decay) * g^2`.
    RmsProp { decay: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn rms_prop() -> Self {
        OptimizerKind::RmsProp {
            decay: 0.99,
            epsilon: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Plain => Ok(()),
            OptimizerKind::RmsProp { decay, epsilon } => {
                if (0.0..1.0).contains(&decay) && epsilon > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "rms-prop needs decay in [0,1) and epsilon > 0, got {decay}/{epsilon}"
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    mean_sq: Option<Weights>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            mean_sq: None,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }
}

/// Moves `params` along (or against) `grad`.
pub fn apply_update(
    params: &mut Weights,
    grad: &Gradient,
    lr: f64,
    state: &mut OptimizerState,
    direction: Direction,
) -> Result<()> {
    params.check_congruent(&grad.0)?;
    let sign = match direction {
        Direction::Ascend => 1.0,
        Direction::Descend => -1.0,
    };
    match state.kind {
        OptimizerKind::Plain => params.add_scaled(&grad.0, sign * lr),
        OptimizerKind::RmsProp { decay, epsilon } => {
            let ms = state
                .mean_sq
                .get_or_insert_with(|| Weights::zeros(*params.shape()));
            ms.check_congruent(params)?;
            ms.for_each_pair(&grad.0, |m, g| *m = decay * *m + (1.0 - decay) * g * g);
            let mut step = grad.0.clone();
            step.for_each_pair(ms, |g, m| *g /= (m + epsilon).sqrt());
            params.add_scaled(&step, sign * lr)
        }
    }
}
