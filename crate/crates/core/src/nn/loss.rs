//! Training objectives of the gated networks and their baselines.
//!
//! Inputs are either single sequences `[T]` or batches `[batch, T]`. A batch
//! loss is the mean of the per-sequence losses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{config_err, data_err, Result};

/// Which terms the gated variants are trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Gated-output MSE plus on/off cross entropy.
    #[default]
    Joint,
    /// Gated-output MSE alone.
    OutputOnly,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Joint => "joint",
            LossMode::OutputOnly => "output_only",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = crate::error::NilmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(LossMode::Joint),
            "output_only" | "output-only" => Ok(LossMode::OutputOnly),
            other => Err(config_err!("unknown loss mode {other:?} (expected joint | output_only)")),
        }
    }
}

fn same_shape(tape: &Tape<'_>, a: Var, b: Var, what: &str) -> Result<()> {
    let (sa, sb) = (tape.shape(a)?, tape.shape(b)?);
    if sa != sb {
        return Err(config_err!("{what}: shape mismatch {sa:?} vs {sb:?}"));
    }
    Ok(())
}

/// `(1/T) sum_t (y_t - p_t * o_t)^2`, the error of the gated output.
pub fn loss_output(tape: &mut Tape<'_>, y: Var, p_hat: Var, o_hat: Var) -> Result<Var> {
    same_shape(tape, y, p_hat, "loss_output")?;
    same_shape(tape, y, o_hat, "loss_output")?;
    let gated = tape.mul(p_hat, o_hat)?;
    tape.squared_error_mean(gated, y)
}

/// `(1/T) sum_t (y_t - p_t)^2`, the plain regression MSE.
pub fn loss_power(tape: &mut Tape<'_>, y: Var, p_hat: Var) -> Result<Var> {
    same_shape(tape, y, p_hat, "loss_power")?;
    tape.squared_error_mean(p_hat, y)
}

/// Sigmoid cross entropy summed over the sequence (not averaged), taking the
/// classifier's pre-sigmoid logits. Labels must be exactly 0 or 1.
pub fn loss_on(tape: &mut Tape<'_>, labels: Var, logits: Var) -> Result<Var> {
    same_shape(tape, labels, logits, "loss_on")?;
    if let Some(bad) = tape.value(labels)?.iter().find(|&&o| o != 0.0 && o != 1.0) {
        return Err(data_err!("on/off label {bad} is not binary"));
    }
    let sequences = match tape.shape(logits)? {
        [batch, _] => *batch,
        _ => 1,
    };
    let total = tape.bce_with_logits_sum(logits, labels)?;
    if sequences == 1 {
        Ok(total)
    } else {
        tape.scale(total, 1.0 / sequences as f64)
    }
}

/// Unweighted sum of the gated-output loss and the on/off loss.
pub fn loss_joint(
    tape: &mut Tape<'_>,
    y: Var,
    p_hat: Var,
    o_hat: Var,
    labels: Var,
    logits: Var,
) -> Result<Var> {
    let output = loss_output(tape, y, p_hat, o_hat)?;
    let on = loss_on(tape, labels, logits)?;
    tape.add(output, on)
}
