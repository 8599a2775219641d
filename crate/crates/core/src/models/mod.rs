//! Disaggregation networks behind one trait, created by name from a
//! registry.
//!
//! | name          | output                              |
//! |---------------|-------------------------------------|
//! | `sgn`         | `p ⊙ o`                             |
//! | `sgn-sp`      | `p ⊙ o + (1 - o) b`                 |
//! | `hard-sgn`    | `p ⊙ g(o)`                          |
//! | `hard-sgn-sp` | `p ⊙ g(o) + (1 - g(o)) b`           |
//! | `seq2seq`     | `p`                                 |
//! | `dae`         | autoencoder over the whole window   |
//!
//! `p` is the regression subnetwork, `o = sigmoid(logits)` the on/off
//! classification subnetwork, `g(x) = [x >= 0.5]` and `b` a learnable
//! standby scalar.

mod baselines;
mod gated;
mod subnet;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{DaeModel, Seq2SeqModel, DAE_BOTTLENECK, DAE_CHANNELS, DAE_KERNEL};
pub use gated::{hard_gate, GatedModel, STANDBY_PARAM};
pub use subnet::{ConvSpec, SubnetworkConfig};

use crate::autodiff::{Tape, Var};
use crate::dataset::windows::{Geometry, WindowedBatch};
use crate::error::{config_err, Result};
use crate::nn::loss::LossMode;
use crate::nn::params::{Bound, ParameterSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "sgn")]
    Sgn,
    #[serde(rename = "sgn-sp")]
    SgnSp,
    #[serde(rename = "hard-sgn")]
    HardSgn,
    #[serde(rename = "hard-sgn-sp")]
    HardSgnSp,
    #[serde(rename = "seq2seq")]
    Seq2Seq,
    #[serde(rename = "dae")]
    Dae,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Sgn,
        Variant::SgnSp,
        Variant::HardSgn,
        Variant::HardSgnSp,
        Variant::Seq2Seq,
        Variant::Dae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Sgn => "sgn",
            Variant::SgnSp => "sgn-sp",
            Variant::HardSgn => "hard-sgn",
            Variant::HardSgnSp => "hard-sgn-sp",
            Variant::Seq2Seq => "seq2seq",
            Variant::Dae => "dae",
        }
    }

    /// Owns the standby scalar `b`.
    pub fn has_standby(self) -> bool {
        matches!(self, Variant::SgnSp | Variant::HardSgnSp)
    }

    /// Has an on/off classification subnetwork.
    pub fn is_gated(self) -> bool {
        matches!(self, Variant::Sgn | Variant::SgnSp | Variant::HardSgn | Variant::HardSgnSp)
    }

    pub fn is_hard(self) -> bool {
        matches!(self, Variant::HardSgn | Variant::HardSgnSp)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = crate::error::NilmError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                config_err!("unknown variant {s:?} (expected one of {})", names.join(", "))
            })
    }
}

/// Tape handles produced by one forward pass. Values are `[batch, s]`
/// unless noted.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// What is compared against the target. For the autoencoder this is
    /// `[batch, s + 2w - 6]`, the centre of the input window.
    pub output: Var,
    pub p_hat: Option<Var>,
    pub o_hat: Option<Var>,
    /// Pre-sigmoid classifier output.
    pub logits: Option<Var>,
    /// `[1]`
    pub standby: Option<Var>,
}

/// Scalar loss handles. `total` is what is differentiated.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Regression error of the model output.
    pub output: Var,
    /// On/off cross entropy, when it is part of `total`.
    pub on: Option<Var>,
}

/// Inference result aligned with the target span, `[batch, s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub output: Tensor,
    pub o_hat: Option<Tensor>,
}

pub trait Disaggregator: Send + Sync {
    fn variant(&self) -> Variant;

    fn config(&self) -> &SubnetworkConfig;

    fn geometry(&self) -> Geometry {
        self.config().geometry
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> Result<ParameterSet>;

    /// `input` is `[batch, s + 2w]`.
    fn forward(&self, tape: &mut Tape<'_>, params: &Bound, input: Var) -> Result<ModelOutput>;

    /// Training objective for `batch`, already forwarded as `out`.
    fn training_loss(
        &self,
        tape: &mut Tape<'_>,
        out: &ModelOutput,
        batch: &WindowedBatch,
        mode: LossMode,
    ) -> Result<LossTerms>;

    /// `(offset, len)` of the target span within `output`'s columns.
    fn target_span(&self) -> (usize, usize) {
        (0, self.geometry().s)
    }

    /// Forward pass without gradients, cropped to the target span.
    fn predict(&self, params: &ParameterSet, inputs: Tensor) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(inputs);
        let out = self.forward(&mut tape, &bound, x)?;
        let (offset, len) = self.target_span();
        let crop = |var: Var| -> Result<Tensor> {
            let shape = tape.shape(var)?;
            let (batch, width) = (shape[0], shape[1]);
            let values = tape.value(var)?;
            let data = values
                .chunks_exact(width)
                .flat_map(|row| row[offset..offset + len].iter().copied())
                .collect();
            Tensor::new(&[batch, len], data)
        };
        Ok(Prediction {
            output: crop(out.output)?,
            o_hat: out.o_hat.map(|o| tape.to_tensor(o)).transpose()?,
        })
    }
}

pub type Factory = fn(Variant, &SubnetworkConfig) -> Result<Box<dyn Disaggregator>>;

/// Name → constructor table for every model variant.
pub struct ModelRegistry {
    entries: BTreeMap<String, (Variant, Factory)>,
}

impl ModelRegistry {
    pub fn empty() -> Self {
        ModelRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for v in [Variant::Sgn, Variant::SgnSp, Variant::HardSgn, Variant::HardSgnSp] {
            r.register(v, GatedModel::factory);
        }
        r.register(Variant::Seq2Seq, Seq2SeqModel::factory);
        r.register(Variant::Dae, DaeModel::factory);
        r
    }

    pub fn register(&mut self, variant: Variant, factory: Factory) {
        self.entries.insert(variant.name().to_string(), (variant, factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, config: &SubnetworkConfig) -> Result<Box<dyn Disaggregator>> {
        let variant: Variant = name.parse()?;
        let (variant, factory) = self
            .entries
            .get(variant.name())
            .ok_or_else(|| config_err!("variant {variant} is not registered"))?;
        factory(*variant, config)
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Builds a variant with the standard registry.
pub fn build(variant: Variant, config: &SubnetworkConfig) -> Result<Box<dyn Disaggregator>> {
    ModelRegistry::builtin().create(variant.name(), config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn mini() -> SubnetworkConfig {
        SubnetworkConfig::miniature(Geometry::new(4, 8).unwrap())
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("HARD_SGN_SP".parse::<Variant>().unwrap(), Variant::HardSgnSp);
        assert!("fhmm".parse::<Variant>().is_err());
    }

    #[test]
    fn registry_builds_every_variant() {
        let reg = ModelRegistry::builtin();
        assert_eq!(reg.names().len(), 6);
        for v in Variant::ALL {
            let m = reg.create(v.name(), &mini()).unwrap();
            assert_eq!(m.variant(), v);
            let params = m.init_params(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(params.contains(STANDBY_PARAM), v.has_standby());
        }
        assert!(ModelRegistry::empty().create("sgn", &mini()).is_err());
    }

    #[test]
    fn seq2seq_is_half_an_sgn() {
        let cfg = SubnetworkConfig::paper(Geometry::new(32, 64).unwrap());
        let sgn = build(Variant::Sgn, &cfg).unwrap();
        let s2s = build(Variant::Seq2Seq, &cfg).unwrap();
        let sp = build(Variant::SgnSp, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n_sgn = sgn.init_params(&mut rng).unwrap().num_scalars();
        let n_s2s = s2s.init_params(&mut rng).unwrap().num_scalars();
        let n_sp = sp.init_params(&mut rng).unwrap().num_scalars();
        assert_eq!(n_sgn, 2 * n_s2s);
        assert_eq!(n_sp, n_sgn + 1);
    }

    #[test]
    fn predictions_have_target_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in Variant::ALL {
            let m = build(v, &mini()).unwrap();
            let params = m.init_params(&mut rng).unwrap();
            let p = m.predict(&params, Tensor::full(&[2, 20], 0.3).unwrap()).unwrap();
            assert_eq!(p.output.shape(), &[2, 4], "{v}");
            assert_eq!(p.o_hat.is_some(), v.is_gated());
        }
    }
}
