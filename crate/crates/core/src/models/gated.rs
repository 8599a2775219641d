use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::dataset::windows::WindowedBatch;
use crate::error::{config_err, Result};
use crate::models::{Disaggregator, LossTerms, ModelOutput, SubnetworkConfig, Variant};
use crate::nn::loss::{loss_on, LossMode};
use crate::nn::params::{Bound, ParameterSet};
use crate::tensor::Tensor;

pub const STANDBY_PARAM: &str = "standby";
const POWER: &str = "power";
const ON: &str = "on";

/// `g(x) = 1` iff `x >= 0.5`.
pub fn hard_gate(o: f64) -> f64 {
    if o >= 0.5 {
        1.0
    } else {
        0.0
    }
}

/// Regression subnetwork gated by an on/off classification subnetwork.
/// The two subnetworks share the architecture but not parameters.
pub struct GatedModel {
    variant: Variant,
    config: SubnetworkConfig,
}

impl GatedModel {
    pub fn new(variant: Variant, config: SubnetworkConfig) -> Result<Self> {
        if !variant.is_gated() {
            return Err(config_err!("{variant} is not a gated variant"));
        }
        config.validate()?;
        Ok(GatedModel { variant, config })
    }

    pub fn factory(variant: Variant, config: &SubnetworkConfig) -> Result<Box<dyn Disaggregator>> {
        Ok(Box::new(Self::new(variant, config.clone())?))
    }
}

impl Disaggregator for GatedModel {
    fn variant(&self) -> Variant {
        self.variant
    }

    fn config(&self) -> &SubnetworkConfig {
        &self.config
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParameterSet> {
        let mut params = ParameterSet::new();
        self.config.init_params(POWER, &mut params, rng)?;
        self.config.init_params(ON, &mut params, rng)?;
        if self.variant.has_standby() {
            params.insert(STANDBY_PARAM, Tensor::vector(vec![0.0])?)?;
        }
        Ok(params)
    }

    fn forward(&self, tape: &mut Tape<'_>, params: &Bound, input: Var) -> Result<ModelOutput> {
        let p_hat = self.config.forward(tape, params, POWER, input)?;
        let logits = self.config.forward(tape, params, ON, input)?;
        let o_hat = tape.sigmoid(logits)?;
        // the hard gate is a constant: no gradient flows through g
        let gate = if self.variant.is_hard() {
            let shape = tape.shape(o_hat)?.to_vec();
            let g = tape.value(o_hat)?.iter().map(|&o| hard_gate(o)).collect();
            tape.constant(Tensor::new(&shape, g)?)
        } else {
            o_hat
        };
        let gated = tape.mul(p_hat, gate)?;
        let (output, standby) = if self.variant.has_standby() {
            let b = params.get(STANDBY_PARAM)?;
            let closed = tape.one_minus(gate)?;
            let off = tape.scale_by(closed, b)?;
            (tape.add(gated, off)?, Some(b))
        } else {
            (gated, None)
        };
        Ok(ModelOutput {
            output,
            p_hat: Some(p_hat),
            o_hat: Some(o_hat),
            logits: Some(logits),
            standby,
        })
    }

    fn training_loss(
        &self,
        tape: &mut Tape<'_>,
        out: &ModelOutput,
        batch: &WindowedBatch,
        mode: LossMode,
    ) -> Result<LossTerms> {
        let y = tape.constant(batch.targets.clone());
        let output = tape.squared_error_mean(out.output, y)?;
        match mode {
            LossMode::OutputOnly => Ok(LossTerms {
                total: output,
                output,
                on: None,
            }),
            LossMode::Joint => {
                let labels = tape.constant(batch.labels.clone());
                let logits = out.logits.ok_or_else(|| config_err!("gated output lacks logits"))?;
                let on = loss_on(tape, labels, logits)?;
                Ok(LossTerms {
                    total: tape.add(output, on)?,
                    output,
                    on: Some(on),
                })
            }
        }
    }
}
