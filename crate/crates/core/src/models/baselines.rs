use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::dataset::windows::WindowedBatch;
use crate::error::{config_err, Result};
use crate::models::{Disaggregator, LossTerms, ModelOutput, SubnetworkConfig, Variant};
use crate::nn::init::{he_init, zero_bias};
use crate::nn::loss::{loss_power, LossMode};
use crate::nn::params::{Bound, ParameterSet};
use crate::tensor::Tensor;

const POWER: &str = "power";

/// A single regression subnetwork trained on plain MSE.
pub struct Seq2SeqModel {
    config: SubnetworkConfig,
}

impl Seq2SeqModel {
    pub fn new(config: SubnetworkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Seq2SeqModel { config })
    }

    pub fn factory(_: Variant, config: &SubnetworkConfig) -> Result<Box<dyn Disaggregator>> {
        Ok(Box::new(Self::new(config.clone())?))
    }
}

impl Disaggregator for Seq2SeqModel {
    fn variant(&self) -> Variant {
        Variant::Seq2Seq
    }

    fn config(&self) -> &SubnetworkConfig {
        &self.config
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParameterSet> {
        let mut params = ParameterSet::new();
        self.config.init_params(POWER, &mut params, rng)?;
        Ok(params)
    }

    fn forward(&self, tape: &mut Tape<'_>, params: &Bound, input: Var) -> Result<ModelOutput> {
        let p_hat = self.config.forward(tape, params, POWER, input)?;
        Ok(ModelOutput {
            output: p_hat,
            p_hat: Some(p_hat),
            o_hat: None,
            logits: None,
            standby: None,
        })
    }

    /// Always the plain MSE; there is no classifier for `mode` to select.
    fn training_loss(&self, tape: &mut Tape<'_>, out: &ModelOutput, batch: &WindowedBatch, _: LossMode) -> Result<LossTerms> {
        let y = tape.constant(batch.targets.clone());
        let output = loss_power(tape, y, out.output)?;
        Ok(LossTerms {
            total: output,
            output,
            on: None,
        })
    }
}

pub const DAE_KERNEL: usize = 4;
pub const DAE_CHANNELS: usize = 8;
pub const DAE_BOTTLENECK: usize = 128;

/// Denoising autoencoder: conv, three dense layers, conv back to one
/// channel. Both convolutions are valid, so a window of length `L`
/// reconstructs the centre `L - 6` samples.
pub struct DaeModel {
    config: SubnetworkConfig,
}

impl DaeModel {
    pub fn new(config: SubnetworkConfig) -> Result<Self> {
        let g = config.geometry;
        if g.input_len() < 2 * DAE_KERNEL - 1 {
            return Err(config_err!("autoencoder needs a window of at least 7 samples, got {}", g.input_len()));
        }
        // the target span must lie inside the reconstructed centre
        if g.w < DAE_KERNEL - 1 {
            return Err(config_err!("autoencoder needs context w >= 3, got {}", g.w));
        }
        Ok(DaeModel { config })
    }

    pub fn factory(_: Variant, config: &SubnetworkConfig) -> Result<Box<dyn Disaggregator>> {
        Ok(Box::new(Self::new(config.clone())?))
    }

    /// `(L - 3) * 8`, the width of the outer dense layers.
    pub fn code_width(&self) -> usize {
        (self.config.input_len() - DAE_KERNEL + 1) * DAE_CHANNELS
    }

    pub fn output_len(&self) -> usize {
        self.config.input_len() - 2 * (DAE_KERNEL - 1)
    }
}

impl Disaggregator for DaeModel {
    fn variant(&self) -> Variant {
        Variant::Dae
    }

    fn config(&self) -> &SubnetworkConfig {
        &self.config
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParameterSet> {
        let mut p = ParameterSet::new();
        let wide = self.code_width();
        p.insert("dae.conv_in.kernel", he_init(&[DAE_KERNEL, 1, DAE_CHANNELS], DAE_KERNEL, rng)?)?;
        p.insert("dae.conv_in.bias", zero_bias(DAE_CHANNELS)?)?;
        for (name, n_in, n_out) in [
            ("dae.dense0", wide, wide),
            ("dae.dense1", wide, DAE_BOTTLENECK),
            ("dae.dense2", DAE_BOTTLENECK, wide),
        ] {
            p.insert(format!("{name}.weight"), he_init(&[n_in, n_out], n_in, rng)?)?;
            p.insert(format!("{name}.bias"), zero_bias(n_out)?)?;
        }
        p.insert(
            "dae.conv_out.kernel",
            he_init(&[DAE_KERNEL, DAE_CHANNELS, 1], DAE_KERNEL * DAE_CHANNELS, rng)?,
        )?;
        p.insert("dae.conv_out.bias", zero_bias(1)?)?;
        Ok(p)
    }

    fn forward(&self, tape: &mut Tape<'_>, params: &Bound, input: Var) -> Result<ModelOutput> {
        let shape = tape.shape(input)?.to_vec();
        let len = self.config.input_len();
        if shape.len() != 2 || shape[1] != len {
            return Err(config_err!("autoencoder expects input [batch, {len}], got {shape:?}"));
        }
        let batch = shape[0];
        let x = tape.reshape(input, &[batch, len, 1])?;
        let x = tape.conv1d_valid(x, params.get("dae.conv_in.kernel")?, params.get("dae.conv_in.bias")?)?;
        let x = tape.relu(x)?;
        let mut h = tape.reshape(x, &[batch, self.code_width()])?;
        for name in ["dae.dense0", "dae.dense1", "dae.dense2"] {
            let d = tape.dense(h, params.get(&format!("{name}.weight"))?, params.get(&format!("{name}.bias"))?)?;
            h = tape.relu(d)?;
        }
        let h = tape.reshape(h, &[batch, len - DAE_KERNEL + 1, DAE_CHANNELS])?;
        let y = tape.conv1d_valid(h, params.get("dae.conv_out.kernel")?, params.get("dae.conv_out.bias")?)?;
        let output = tape.reshape(y, &[batch, self.output_len()])?;
        Ok(ModelOutput {
            output,
            p_hat: None,
            o_hat: None,
            logits: None,
            standby: None,
        })
    }

    /// MSE against the appliance over the reconstructed centre of the
    /// window.
    fn training_loss(&self, tape: &mut Tape<'_>, out: &ModelOutput, batch: &WindowedBatch, _: LossMode) -> Result<LossTerms> {
        let len = self.config.input_len();
        let (lo, hi) = (DAE_KERNEL - 1, len - DAE_KERNEL + 1);
        let ctx = &batch.context_targets;
        if ctx.shape().get(1) != Some(&len) {
            return Err(config_err!("batch window length does not match the autoencoder"));
        }
        let centre: Vec<f64> = ctx.data().chunks_exact(len).flat_map(|row| row[lo..hi].iter().copied()).collect();
        let y = tape.constant(Tensor::new(&[ctx.shape()[0], hi - lo], centre)?);
        let output = loss_power(tape, y, out.output)?;
        Ok(LossTerms {
            total: output,
            output,
            on: None,
        })
    }

    fn target_span(&self) -> (usize, usize) {
        (self.config.geometry.w - (DAE_KERNEL - 1), self.config.geometry.s)
    }
}
