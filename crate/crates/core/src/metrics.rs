//! Error metrics in watts and on-probability histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, usage_err, Result};

/// Interior of the on-probability range used as a bimodality score.
pub const INTERIOR: (f64, f64) = (0.1, 0.9);

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(usage_err!(
            "ground truth has {} samples but the prediction has {}",
            y.len(),
            y_hat.len()
        ));
    }
    if y.is_empty() {
        return Err(data_err!("cannot score an empty series"));
    }
    Ok(())
}

/// `(1/T) sum_t |y_t - y_hat_t|`.
pub fn mae(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let total: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / y.len() as f64)
}

/// Signal aggregate error over periods of `n_delta` samples:
/// `(1/T_d) sum_tau |r_tau - r_hat_tau| / n_delta`, where `r_tau` sums
/// period `tau`. Samples after the last whole period are ignored.
pub fn sae_delta(y: &[f64], y_hat: &[f64], n_delta: usize) -> Result<f64> {
    check_pair(y, y_hat)?;
    if n_delta == 0 {
        return Err(config_err!("period length must be at least one sample"));
    }
    let periods = y.len() / n_delta;
    if periods == 0 {
        return Err(data_err!("{} samples do not fill one period of {n_delta}", y.len()));
    }
    let total: f64 = y
        .chunks_exact(n_delta)
        .zip(y_hat.chunks_exact(n_delta))
        .map(|(a, b)| {
            let r: f64 = a.iter().sum();
            let r_hat: f64 = b.iter().sum();
            (r - r_hat).abs() / n_delta as f64
        })
        .sum();
    Ok(total / periods as f64)
}

/// [`sae_delta`] for every period length in `deltas`.
pub fn sweep_delta(y: &[f64], y_hat: &[f64], deltas: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if deltas.is_empty() {
        return Err(config_err!("period grid is empty"));
    }
    deltas.iter().map(|&d| Ok((d, sae_delta(y, y_hat, d)?))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnProbHistogram {
    /// `bins + 1` uniform edges from 0 to 1.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Fraction of values strictly inside (0.1, 0.9).
    pub interior_fraction: f64,
}

/// Uniform-width histogram over [0, 1]; the last bin is closed.
pub fn on_prob_histogram(values: &[f64], bins: usize) -> Result<OnProbHistogram> {
    if bins == 0 {
        return Err(config_err!("histogram needs at least one bin"));
    }
    if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(data_err!("on probability {bad} is outside [0, 1]"));
    }
    let mut counts = vec![0u64; bins];
    let mut interior = 0u64;
    for &v in values {
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
        if v > INTERIOR.0 && v < INTERIOR.1 {
            interior += 1;
        }
    }
    let total = values.len() as u64;
    Ok(OnProbHistogram {
        edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
        counts,
        total,
        interior_fraction: if total == 0 { 0.0 } else { interior as f64 / total as f64 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaeEntry {
    pub n_delta: usize,
    pub periods: usize,
    /// Trailing samples outside any whole period.
    pub dropped: usize,
    pub sae_watts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplianceMetrics {
    pub samples: usize,
    pub mae_watts: f64,
    /// Keyed by `n_delta`, zero-padded so keys sort numerically.
    pub sae_by_delta: BTreeMap<String, SaeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_histogram: Option<OnProbHistogram>,
}

impl ApplianceMetrics {
    /// Scores one appliance. Deltas longer than the series are skipped.
    pub fn compute(y: &[f64], y_hat: &[f64], deltas: &[usize], o_hats: Option<&[f64]>, bins: usize) -> Result<Self> {
        let mut sae_by_delta = BTreeMap::new();
        for &d in deltas {
            if d == 0 || d > y.len() {
                continue;
            }
            let periods = y.len() / d;
            sae_by_delta.insert(
                delta_key(d),
                SaeEntry {
                    n_delta: d,
                    periods,
                    dropped: y.len() - periods * d,
                    sae_watts: sae_delta(y, y_hat, d)?,
                },
            );
        }
        Ok(ApplianceMetrics {
            samples: y.len(),
            mae_watts: mae(y, y_hat)?,
            sae_by_delta,
            on_histogram: o_hats.map(|o| on_prob_histogram(o, bins)).transpose()?,
        })
    }

    /// SAE values in increasing period order.
    pub fn sae_series(&self) -> Vec<(usize, f64)> {
        self.sae_by_delta.values().map(|e| (e.n_delta, e.sae_watts)).collect()
    }

    fn validate(&self) -> Result<()> {
        let values = std::iter::once(self.mae_watts).chain(self.sae_by_delta.values().map(|e| e.sae_watts));
        for v in values {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(data_err!("metric value {v} is not a finite non-negative number"));
            }
        }
        Ok(())
    }
}

pub fn delta_key(n_delta: usize) -> String {
    format!("{n_delta:08}")
}

/// Metrics for every evaluated appliance, serialized with stable key order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub appliances: BTreeMap<String, ApplianceMetrics>,
}

impl MetricsReport {
    pub fn new(variant: impl Into<String>) -> Self {
        MetricsReport {
            variant: variant.into(),
            appliances: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, appliance: impl Into<String>, metrics: ApplianceMetrics) -> Result<()> {
        metrics.validate()?;
        self.appliances.insert(appliance.into(), metrics);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| data_err!("metrics report: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_hand_values() {
        assert_eq!(mae(&[1.0, 1.0], &[3.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[2.0, 5.0], &[2.0, 5.0]).unwrap(), 0.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sae_hand_values() {
        assert_eq!(sae_delta(&[1.0; 4], &[0.0, 2.0, 1.0, 1.0], 2).unwrap(), 0.0);
        assert_eq!(sae_delta(&[1.0, 1.0], &[3.0, 1.0], 2).unwrap(), 1.0);
        assert!(sae_delta(&[1.0], &[1.0], 2).is_err());
        assert!(sae_delta(&[1.0], &[1.0], 0).is_err());
    }

    #[test]
    fn trailing_remainder_is_dropped() {
        let m = ApplianceMetrics::compute(&[1.0; 7], &[0.0; 7], &[3, 10], None, 10).unwrap();
        let e = &m.sae_by_delta[&delta_key(3)];
        assert_eq!((e.periods, e.dropped), (2, 1));
        assert!(!m.sae_by_delta.contains_key(&delta_key(10)));
    }

    #[test]
    fn sweep_singleton_and_zero() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let s = sweep_delta(&y, &y, &[2]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[&2], 0.0);
        assert!(sweep_delta(&y, &y, &[]).is_err());
    }

    #[test]
    fn histogram_cases() {
        let h = on_prob_histogram(&[0.0; 5], 10).unwrap();
        assert_eq!(h.counts[0], 5);
        assert_eq!(h.counts.iter().sum::<u64>(), 5);
        let h = on_prob_histogram(&[0.05, 0.95, 1.0], 10).unwrap();
        assert_eq!(h.interior_fraction, 0.0);
        assert_eq!(h.counts[9], 2);
        assert!(on_prob_histogram(&[1.5], 10).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let mut r = MetricsReport::new("sgn");
        let m = ApplianceMetrics::compute(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0], &[1, 2], Some(&[0.2, 0.99, 0.0]), 4).unwrap();
        r.insert("kettle", m).unwrap();
        let json = r.to_json();
        assert_eq!(MetricsReport::from_json(&json).unwrap(), r);
        assert_eq!(r.to_json(), json);
    }
}
