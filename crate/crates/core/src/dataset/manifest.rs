//! Dataset manifests: which channel files make up a house, and how to split
//! them into training and test data.
//!
//! ```toml
//! sample_period = 36.0
//! preprocess = "none"        # or "redd" for split / backfill / filter
//!
//! [thresholds]               # optional per-appliance on/off thresholds (W)
//! kettle = 15.0
//!
//! [train]
//! aggregate = "aggregate.csv"
//! end = 1600172800.0         # optional, exclusive, unix seconds
//! [train.appliances]
//! fridge = "fridge.csv"
//!
//! [test]
//! aggregate = "aggregate.csv"
//! start = 1600172800.0       # optional, inclusive
//! [test.appliances]
//! fridge = "fridge.csv"
//! ```
//!
//! Relative paths are resolved against the manifest's directory. All
//! channels must share `sample_period`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::channel::{align, crop_time, load_channel, ChannelSeries};
use crate::dataset::labels::DEFAULT_THRESHOLD_WATTS;
use crate::dataset::preprocess::preprocess_aligned;
use crate::error::{config_err, data_err, NilmError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    /// Data is already clean; any missing sample is an error.
    #[default]
    None,
    /// Split at long gaps, backfill short ones, keep pieces over a day.
    Redd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub aggregate: PathBuf,
    pub appliances: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sample_period: f64,
    #[serde(default)]
    pub preprocess: PreprocessMode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<SplitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<SplitSpec>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// A gap-free stretch of aligned channels, in watts.
#[derive(Clone, Debug, PartialEq)]
pub struct HouseSegment {
    pub start_time: f64,
    pub aggregate: Vec<f64>,
    pub appliances: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HouseData {
    pub sample_period: f64,
    pub segments: Vec<HouseSegment>,
}

impl HouseData {
    pub fn appliance_names(&self) -> Vec<String> {
        self.segments
            .first()
            .map(|s| s.appliances.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.aggregate.len()).sum()
    }

    /// The aggregate of every segment, concatenated.
    pub fn all_aggregate(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| s.aggregate.iter().copied()).collect()
    }
}

impl Manifest {
    pub fn new(sample_period: f64) -> Self {
        Manifest {
            sample_period,
            preprocess: PreprocessMode::None,
            thresholds: BTreeMap::new(),
            train: None,
            test: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| config_err!("manifest: {e}"))?;
        if !(m.sample_period > 0.0) {
            return Err(config_err!("manifest sample_period must be positive"));
        }
        if let Some((name, t)) = m.thresholds.iter().find(|(_, t)| !(**t >= 0.0)) {
            return Err(config_err!("threshold for {name} must be non-negative, got {t}"));
        }
        m.base_dir = base_dir.to_path_buf();
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NilmError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err!("manifest: {e}"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| NilmError::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn split(&self, role: Role) -> Result<&SplitSpec> {
        match role {
            Role::Train => self.train.as_ref(),
            Role::Test => self.test.as_ref(),
        }
        .ok_or_else(|| config_err!("manifest has no [{}] section", role.name()))
    }

    pub fn threshold_for(&self, appliance: &str, default: f64) -> f64 {
        self.thresholds.get(appliance).copied().unwrap_or(default)
    }

    pub fn default_threshold(&self, appliance: &str) -> f64 {
        self.threshold_for(appliance, DEFAULT_THRESHOLD_WATTS)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Loads, crops and aligns the channels of one split.
    pub fn load_channels(&self, role: Role) -> Result<(ChannelSeries, BTreeMap<String, ChannelSeries>)> {
        let spec = self.split(role)?;
        if spec.appliances.is_empty() {
            return Err(config_err!("[{}] lists no appliances", role.name()));
        }
        let load = |p: &Path| -> Result<ChannelSeries> {
            let series = load_channel(&self.resolve(p), self.sample_period)?;
            Ok(crop_time(&series, spec.start, spec.end))
        };
        let mut channels = vec![load(&spec.aggregate)?];
        for path in spec.appliances.values() {
            channels.push(load(path)?);
        }
        let mut aligned = align(&channels)?.into_iter();
        let aggregate = aligned.next().expect("aggregate present");
        let appliances = spec.appliances.keys().cloned().zip(aligned).collect();
        Ok((aggregate, appliances))
    }

    /// Loads a split and applies the configured gap handling.
    pub fn load_split(&self, role: Role) -> Result<HouseData> {
        let (aggregate, appliances) = self.load_channels(role)?;
        let names: Vec<String> = appliances.keys().cloned().collect();
        let mut channels = vec![aggregate];
        channels.extend(appliances.into_values());

        let pieces = match self.preprocess {
            PreprocessMode::Redd => preprocess_aligned(&channels)?.pieces,
            PreprocessMode::None => {
                if let Some(c) = channels.iter().find(|c| c.missing_count() > 0) {
                    return Err(data_err!(
                        "[{}] has {} missing samples; set preprocess = \"redd\" to handle gaps",
                        role.name(),
                        c.missing_count()
                    ));
                }
                vec![channels]
            }
        };
        let segments = pieces
            .into_iter()
            .map(|piece| {
                let start_time = piece[0].start_time();
                let mut values = piece.iter().map(ChannelSeries::values);
                let aggregate = values.next().expect("aggregate")?;
                let appliances = names
                    .iter()
                    .cloned()
                    .zip(values)
                    .map(|(n, v)| v.map(|v| (n, v)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                Ok(HouseSegment {
                    start_time,
                    aggregate,
                    appliances,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if segments.is_empty() {
            return Err(data_err!("[{}] has no usable data after preprocessing", role.name()));
        }
        Ok(HouseData {
            sample_period: self.sample_period,
            segments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::channel::write_channel;

    #[test]
    fn parse_and_round_trip() {
        let text = r#"
sample_period = 6.0
preprocess = "redd"
[thresholds]
kettle = 20.0
[train]
aggregate = "agg.csv"
end = 100.0
[train.appliances]
kettle = "k.csv"
"#;
        let m = Manifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.preprocess, PreprocessMode::Redd);
        assert_eq!(m.default_threshold("kettle"), 20.0);
        assert_eq!(m.default_threshold("fridge"), 15.0);
        assert!(m.split(Role::Test).is_err());
        let again = Manifest::parse(&m.to_toml().unwrap(), Path::new("/data")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(Manifest::parse("sample_period = 1.0\nbogus = 3\n", Path::new(".")).is_err());
        assert!(Manifest::parse("sample_period = 0.0\n", Path::new(".")).is_err());
    }

    #[test]
    fn loads_split_with_time_crop() {
        let dir = tempfile::tempdir().unwrap();
        let agg = ChannelSeries::from_values(1.0, 0.0, (0..20).map(|v| v as f64 + 5.0).collect()).unwrap();
        let app = ChannelSeries::from_values(1.0, 2.0, (0..20).map(|v| v as f64).collect()).unwrap();
        write_channel(&dir.path().join("agg.csv"), &agg).unwrap();
        write_channel(&dir.path().join("app.csv"), &app).unwrap();
        let text = r#"
sample_period = 1.0
[test]
aggregate = "agg.csv"
start = 4.0
[test.appliances]
app = "app.csv"
"#;
        let m = Manifest::parse(text, dir.path()).unwrap();
        let data = m.load_split(Role::Test).unwrap();
        assert_eq!(data.segments.len(), 1);
        let seg = &data.segments[0];
        assert_eq!(seg.start_time, 4.0);
        assert_eq!(seg.aggregate.len(), 16);
        assert_eq!(seg.appliances["app"][0], 2.0);
        assert_eq!(data.appliance_names(), vec!["app".to_string()]);
    }
}
