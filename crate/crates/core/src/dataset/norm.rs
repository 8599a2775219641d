use serde::{Deserialize, Serialize};

use crate::dataset::channel::ChannelSeries;
use crate::error::{config_err, data_err, Result};

/// Scale shared by the aggregate and every appliance channel of a house:
/// the population standard deviation of the aggregate, in watts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub sigma: f64,
}

impl NormStats {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(config_err!("normalization sigma must be positive, got {sigma}"));
        }
        Ok(NormStats { sigma })
    }

    pub fn normalize_values(&self, watts: &[f64]) -> Vec<f64> {
        watts.iter().map(|v| v / self.sigma).collect()
    }

    pub fn denormalize_values(&self, normalized: &[f64]) -> Vec<f64> {
        normalized.iter().map(|v| v * self.sigma).collect()
    }
}

pub fn compute_norm_values(values: &[f64]) -> Result<NormStats> {
    if values.len() < 2 {
        return Err(data_err!("need at least 2 samples to normalize, got {}", values.len()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(data_err!("aggregate is constant; its standard deviation is zero"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    NormStats::new(var.sqrt()).map_err(|_| data_err!("aggregate has zero spread"))
}

/// Population standard deviation of the present samples.
pub fn compute_norm(aggregate: &ChannelSeries) -> Result<NormStats> {
    let values: Vec<f64> = aggregate.present_values().collect();
    compute_norm_values(&values)
}

pub fn normalize(series: &ChannelSeries, stats: &NormStats) -> ChannelSeries {
    map_values(series, |v| v / stats.sigma)
}

pub fn denormalize(series: &ChannelSeries, stats: &NormStats) -> ChannelSeries {
    map_values(series, |v| v * stats.sigma)
}

fn map_values(series: &ChannelSeries, f: impl Fn(f64) -> f64) -> ChannelSeries {
    let samples = series.samples().iter().map(|s| s.map(&f)).collect();
    ChannelSeries::new(series.sample_period(), series.start_time(), samples)
        .expect("scaling by a positive factor keeps values valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> ChannelSeries {
        ChannelSeries::from_values(1.0, 0.0, v.to_vec()).unwrap()
    }

    #[test]
    fn population_std() {
        assert_eq!(compute_norm(&series(&[0.0, 2.0])).unwrap().sigma, 1.0);
    }

    #[test]
    fn constant_series_rejected() {
        assert!(compute_norm(&series(&[0.1, 0.1, 0.1])).is_err());
        assert!(compute_norm(&series(&[4.0])).is_err());
    }

    #[test]
    fn shift_does_not_change_sigma() {
        let a = compute_norm(&series(&[1.0, 5.0, 2.0, 8.0])).unwrap().sigma;
        let b = compute_norm(&series(&[101.0, 105.0, 102.0, 108.0])).unwrap().sigma;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn normalize_divides() {
        let stats = NormStats::new(100.0).unwrap();
        let n = normalize(&series(&[200.0]), &stats);
        assert_eq!(n.values().unwrap(), vec![2.0]);
        let unit = NormStats::new(1.0).unwrap();
        assert_eq!(normalize(&series(&[3.5]), &unit), series(&[3.5]));
    }

    #[test]
    fn round_trip() {
        let stats = NormStats::new(123.456).unwrap();
        let raw = series(&[0.0, 1.5, 2000.0, 3.02]);
        let back = denormalize(&normalize(&raw, &stats), &stats);
        for (a, b) in raw.values().unwrap().iter().zip(back.values().unwrap()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
