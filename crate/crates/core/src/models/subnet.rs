use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::windows::Geometry;
use crate::error::{config_err, Result};
use crate::nn::init::{he_init, zero_bias};
use crate::nn::params::{Bound, ParameterSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
}

/// Conv stack (valid, stride 1, ReLU), flatten, dense hidden layer (ReLU),
/// dense output layer of width `s` with no activation. Classification
/// heads apply the sigmoid outside this network so the loss can use the
/// logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetworkConfig {
    pub geometry: Geometry,
    pub conv: Vec<ConvSpec>,
    pub hidden: usize,
}

impl SubnetworkConfig {
    pub fn paper(geometry: Geometry) -> Self {
        let conv = [(10, 30), (8, 30), (6, 40), (5, 50), (5, 50), (5, 50)]
            .into_iter()
            .map(|(kernel, filters)| ConvSpec { kernel, filters })
            .collect();
        SubnetworkConfig {
            geometry,
            conv,
            hidden: 1024,
        }
    }

    /// Same layer pattern, shrunk for finite-difference checks and fast
    /// tests.
    pub fn miniature(geometry: Geometry) -> Self {
        let conv = [(3, 3), (3, 3), (2, 4), (2, 5), (2, 5), (2, 5)]
            .into_iter()
            .map(|(kernel, filters)| ConvSpec { kernel, filters })
            .collect();
        SubnetworkConfig {
            geometry,
            conv,
            hidden: 8,
        }
    }

    pub fn input_len(&self) -> usize {
        self.geometry.input_len()
    }

    /// Length after each conv layer.
    pub fn conv_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.input_len();
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, c) in self.conv.iter().enumerate() {
            if c.kernel == 0 || c.filters == 0 {
                return Err(config_err!("conv layer {i} needs a positive kernel and filter count"));
            }
            if len < c.kernel {
                return Err(config_err!(
                    "input length {} is too short for the conv stack (layer {i} sees {len} < kernel {})",
                    self.input_len(),
                    c.kernel
                ));
            }
            len = len - c.kernel + 1;
            out.push(len);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(config_err!("hidden width must be positive"));
        }
        self.conv_lengths().map(|_| ())
    }

    /// Width of the flattened conv output.
    pub fn flat_len(&self) -> Result<usize> {
        let lens = self.conv_lengths()?;
        Ok(match (lens.last(), self.conv.last()) {
            (Some(l), Some(c)) => l * c.filters,
            _ => self.input_len(),
        })
    }

    pub fn init_params<R: Rng + ?Sized>(&self, prefix: &str, params: &mut ParameterSet, rng: &mut R) -> Result<()> {
        self.validate()?;
        let mut in_ch = 1;
        for (i, c) in self.conv.iter().enumerate() {
            let fan_in = c.kernel * in_ch;
            params.insert(
                format!("{prefix}.conv{i}.kernel"),
                he_init(&[c.kernel, in_ch, c.filters], fan_in, rng)?,
            )?;
            params.insert(format!("{prefix}.conv{i}.bias"), zero_bias(c.filters)?)?;
            in_ch = c.filters;
        }
        let flat = self.flat_len()?;
        params.insert(format!("{prefix}.hidden.weight"), he_init(&[flat, self.hidden], flat, rng)?)?;
        params.insert(format!("{prefix}.hidden.bias"), zero_bias(self.hidden)?)?;
        let s = self.geometry.s;
        params.insert(format!("{prefix}.out.weight"), he_init(&[self.hidden, s], self.hidden, rng)?)?;
        params.insert(format!("{prefix}.out.bias"), zero_bias(s)?)?;
        Ok(())
    }

    /// `input` is `[batch, s + 2w]`; the result is `[batch, s]`, before any
    /// head activation.
    pub fn forward(&self, tape: &mut Tape<'_>, params: &Bound, prefix: &str, input: Var) -> Result<Var> {
        let shape = tape.shape(input)?.to_vec();
        if shape.len() != 2 || shape[1] != self.input_len() {
            return Err(config_err!(
                "subnetwork expects input [batch, {}], got {shape:?}",
                self.input_len()
            ));
        }
        let batch = shape[0];
        let mut x = tape.reshape(input, &[batch, self.input_len(), 1])?;
        for i in 0..self.conv.len() {
            let k = params.get(&format!("{prefix}.conv{i}.kernel"))?;
            let b = params.get(&format!("{prefix}.conv{i}.bias"))?;
            let c = tape.conv1d_valid(x, k, b)?;
            x = tape.relu(c)?;
        }
        let flat = tape.reshape(x, &[batch, self.flat_len()?])?;
        let h = tape.dense(
            flat,
            params.get(&format!("{prefix}.hidden.weight"))?,
            params.get(&format!("{prefix}.hidden.bias"))?,
        )?;
        let h = tape.relu(h)?;
        tape.dense(
            h,
            params.get(&format!("{prefix}.out.weight"))?,
            params.get(&format!("{prefix}.out.bias"))?,
        )
    }
}
