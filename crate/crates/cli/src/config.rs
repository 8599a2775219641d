//! Run configuration: a TOML file of named hyperparameters, every key
//! optional, with command-line overrides applied on top.
//!
//! ```toml
//! manifest = "data/manifest.toml"
//! variant = "sgn"
//! preset = "ukdale"          # (s, w) = (32, 200); "redd" is (64, 400)
//! s = 32                     # overrides the preset
//! loss_mode = "joint"
//! steps = 3000
//! out = "runs/sgn"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nilm_core::dataset::labels::DEFAULT_THRESHOLD_WATTS;
use nilm_core::dataset::manifest::Manifest;
use nilm_core::dataset::windows::Geometry;
use nilm_core::models::{SubnetworkConfig, Variant};
use nilm_core::nn::loss::LossMode;
use nilm_core::nn::optim::AdamConfig;
use nilm_core::train::{TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LOG_EVERY};
use nilm_core::{NilmError, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Redd,
    #[default]
    Ukdale,
}

impl Preset {
    pub fn geometry(self) -> Geometry {
        match self {
            Preset::Redd => Geometry::redd(),
            Preset::Ukdale => Geometry::ukdale(),
        }
    }
}

/// Subnetwork size: the published stack, or a tiny one for quick checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    Paper,
    Miniature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub variant: Variant,
    pub preset: Preset,
    pub s: Option<usize>,
    pub w: Option<usize>,
    pub arch: Arch,
    /// Appliances to train; empty means every appliance in the manifest.
    pub appliances: Vec<String>,
    /// On/off threshold for every appliance. When unset, the manifest's
    /// per-appliance value or 15 W applies.
    pub threshold_watts: Option<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub log_every: usize,
    pub out: PathBuf,
    /// SAE periods, in samples.
    pub deltas: Vec<usize>,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            manifest: PathBuf::from("manifest.toml"),
            variant: Variant::Sgn,
            preset: Preset::default(),
            s: None,
            w: None,
            arch: Arch::default(),
            appliances: Vec::new(),
            threshold_watts: None,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: DEFAULT_BATCH_SIZE,
            steps: 10_000,
            seed: 0,
            loss_mode: LossMode::Joint,
            log_every: DEFAULT_LOG_EVERY,
            out: PathBuf::from("out"),
            deltas: vec![1, 10, 60, 600],
            histogram_bins: 20,
        }
    }
}

/// Values given on the command line; each one replaces the file's.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub loss_mode: Option<LossMode>,
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub s: Option<usize>,
    pub w: Option<usize>,
    pub lr: Option<f64>,
    pub appliances: Option<Vec<String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| NilmError::Usage(format!("run config: {e}")))
    }

    /// Relative paths in the file are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NilmError::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is plain data")
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = o.$field { self.$field = v; })* };
        }
        take!(manifest, variant, loss_mode, seed, steps, out, lr, appliances);
        if o.s.is_some() {
            self.s = o.s;
        }
        if o.w.is_some() {
            self.w = o.w;
        }
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let base = self.preset.geometry();
        Geometry::new(self.s.unwrap_or(base.s), self.w.unwrap_or(base.w))
    }

    pub fn subnetwork(&self) -> Result<SubnetworkConfig> {
        let g = self.geometry()?;
        Ok(match self.arch {
            Arch::Paper => SubnetworkConfig::paper(g),
            Arch::Miniature => SubnetworkConfig::miniature(g),
        })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            adam: self.adam(),
            loss_mode: self.loss_mode,
            seed: self.seed,
            log_every: self.log_every,
            dump_dir: Some(self.out.clone()),
        }
    }

    pub fn threshold(&self, manifest: &Manifest, appliance: &str) -> f64 {
        self.threshold_watts
            .unwrap_or_else(|| manifest.threshold_for(appliance, DEFAULT_THRESHOLD_WATTS))
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(NilmError::Usage(m));
        if !(self.lr > 0.0) {
            return usage(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return usage("batch_size must be positive".into());
        }
        if self.deltas.is_empty() || self.deltas.contains(&0) {
            return usage("deltas must be a nonempty list of positive sample counts".into());
        }
        if self.histogram_bins == 0 {
            return usage("histogram_bins must be positive".into());
        }
        if let Some(t) = self.threshold_watts {
            if !(t >= 0.0) {
                return usage(format!("threshold_watts must be non-negative, got {t}"));
            }
        }
        self.geometry()?;
        Ok(())
    }
}
