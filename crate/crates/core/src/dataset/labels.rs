use crate::error::{config_err, Result};

/// Default on/off threshold in watts.
pub const DEFAULT_THRESHOLD_WATTS: f64 = 15.0;

/// On/off state per sample: 1 where power is strictly above `threshold`
/// watts, else 0. Apply to raw watts, not normalized values.
pub fn label_on_off(watts: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(config_err!("threshold must be a non-negative number of watts"));
    }
    Ok(watts
        .iter()
        .map(|&w| if w > threshold { 1.0 } else { 0.0 })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::norm::NormStats;
    use proptest::prelude::*;

    #[test]
    fn strict_threshold() {
        let l = label_on_off(&[0.0, 10.0, 15.0, 15.1, 200.0], 15.0).unwrap();
        assert_eq!(l, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(label_on_off(&[0.0; 4], 15.0).unwrap(), vec![0.0; 4]);
        assert_eq!(label_on_off(&[0.5, 3.0], 0.0).unwrap(), vec![1.0, 1.0]);
        assert!(label_on_off(&[1.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn labels_survive_normalization_round_trip(
            watts in prop::collection::vec(0.0f64..3000.0, 1..200),
            sigma in 1.0f64..2000.0,
        ) {
            let stats = NormStats::new(sigma).unwrap();
            // values within rounding distance of the threshold are excluded
            let watts: Vec<f64> = watts.into_iter().filter(|w| (w - 15.0).abs() > 1e-9).collect();
            let round = stats.denormalize_values(&stats.normalize_values(&watts));
            prop_assert_eq!(
                label_on_off(&watts, 15.0).unwrap(),
                label_on_off(&round, 15.0).unwrap()
            );
        }
    }
}
