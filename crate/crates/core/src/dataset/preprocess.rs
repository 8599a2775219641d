//! Gap handling for channels recorded with dropouts.
//!
//! 1. Split wherever a run of missing samples lasts 20 s or more.
//! 2. Fill the remaining (shorter) holes by backward filling.
//! 3. Keep only pieces lasting more than one day.

use std::ops::Range;

use crate::dataset::channel::ChannelSeries;
use crate::error::{config_err, Result};

/// Missing runs at least this long (seconds) split the series.
pub const MAX_GAP_SECONDS: f64 = 20.0;

/// Kept pieces must last strictly longer than this (seconds).
pub const MIN_SPAN_SECONDS: f64 = 86_400.0;

/// Index ranges of the pieces that survive splitting and length filtering,
/// given which samples are present. Ranges start and end on present
/// samples.
pub fn segment_ranges(present: &[bool], sample_period: f64) -> Vec<Range<usize>> {
    let mut pieces = Vec::new();
    let mut piece_start: Option<usize> = None;
    let mut last_present: Option<usize> = None;
    let mut i = 0;
    while i < present.len() {
        if present[i] {
            piece_start.get_or_insert(i);
            last_present = Some(i);
            i += 1;
            continue;
        }
        let run_start = i;
        while i < present.len() && !present[i] {
            i += 1;
        }
        let run = i - run_start;
        if run as f64 * sample_period >= MAX_GAP_SECONDS {
            if let (Some(s), Some(e)) = (piece_start.take(), last_present) {
                pieces.push(s..e + 1);
            }
        }
    }
    if let (Some(s), Some(e)) = (piece_start, last_present) {
        if e >= s {
            pieces.push(s..e + 1);
        }
    }
    pieces
        .into_iter()
        .filter(|r| r.len() as f64 * sample_period > MIN_SPAN_SECONDS)
        .collect()
}

/// Replaces each missing sample with the next present one.
pub fn backward_fill(samples: &[Option<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; samples.len()];
    let mut next: Option<f64> = None;
    for (slot, sample) in out.iter_mut().zip(samples).rev() {
        if sample.is_some() {
            next = *sample;
        }
        *slot = next.unwrap_or(0.0);
    }
    out
}

/// Split / fill / filter a single channel.
pub fn preprocess_redd(series: &ChannelSeries) -> Vec<ChannelSeries> {
    let present: Vec<bool> = series.samples().iter().map(Option::is_some).collect();
    segment_ranges(&present, series.sample_period())
        .into_iter()
        .map(|r| fill_piece(series, r))
        .collect()
}

/// Output of [`preprocess_aligned`]: one entry per surviving piece, each
/// holding every input channel over that piece.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub ranges: Vec<Range<usize>>,
    pub pieces: Vec<Vec<ChannelSeries>>,
}

/// Split / fill / filter channels that share a time grid. A sample counts
/// as missing when any channel lacks it, so all outputs stay aligned.
pub fn preprocess_aligned(channels: &[ChannelSeries]) -> Result<Preprocessed> {
    let Some(first) = channels.first() else {
        return Ok(Preprocessed {
            ranges: Vec::new(),
            pieces: Vec::new(),
        });
    };
    if channels
        .iter()
        .any(|c| c.len() != first.len() || c.start_time() != first.start_time())
    {
        return Err(config_err!("channels must be aligned before preprocessing"));
    }
    let present: Vec<bool> = (0..first.len())
        .map(|i| channels.iter().all(|c| c.samples()[i].is_some()))
        .collect();
    let ranges = segment_ranges(&present, first.sample_period());
    let pieces = ranges
        .iter()
        .map(|r| {
            channels
                .iter()
                .map(|c| {
                    // union mask: treat samples missing in any channel as missing here too
                    let masked: Vec<Option<f64>> = c.samples()[r.clone()]
                        .iter()
                        .zip(&present[r.clone()])
                        .map(|(v, &p)| if p { *v } else { None })
                        .collect();
                    let values = backward_fill(&masked);
                    ChannelSeries::from_values(c.sample_period(), c.time_at(r.start), values)
                        .expect("filled values come from a valid series")
                })
                .collect()
        })
        .collect();
    Ok(Preprocessed { ranges, pieces })
}

fn fill_piece(series: &ChannelSeries, range: Range<usize>) -> ChannelSeries {
    let values = backward_fill(&series.samples()[range.clone()]);
    ChannelSeries::from_values(series.sample_period(), series.time_at(range.start), values)
        .expect("filled values come from a valid series")
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAY: usize = 86_400;

    fn with_gap(total: usize, gap_at: usize, gap: usize) -> ChannelSeries {
        let samples = (0..total)
            .map(|i| {
                if (gap_at..gap_at + gap).contains(&i) {
                    None
                } else {
                    Some((i % 97) as f64)
                }
            })
            .collect();
        ChannelSeries::new(1.0, 0.0, samples).unwrap()
    }

    #[test]
    fn short_gap_is_backfilled() {
        let s = with_gap(2 * DAY, 5000, 10);
        let out = preprocess_redd(&s);
        assert_eq!(out.len(), 1);
        let v = out[0].values().unwrap();
        assert_eq!(v.len(), 2 * DAY);
        for i in 5000..5010 {
            assert_eq!(v[i], (5010 % 97) as f64);
        }
    }

    #[test]
    fn long_gap_in_middle_drops_both_halves() {
        let s = with_gap(2 * DAY, DAY - 12, 25);
        assert!(preprocess_redd(&s).is_empty());
    }

    #[test]
    fn gapless_series_unchanged() {
        let s = with_gap(3 * DAY, 0, 0);
        let out = preprocess_redd(&s);
        assert_eq!(out, vec![s]);
    }

    #[test]
    fn gap_threshold_is_twenty_seconds() {
        let pieces = |gap: usize| {
            let mut p = vec![true; DAY + 1];
            p.extend(vec![false; gap]);
            p.extend(vec![true; DAY + 1]);
            segment_ranges(&p, 1.0).len()
        };
        assert_eq!(pieces(19), 1);
        assert_eq!(pieces(20), 2);
    }

    #[test]
    fn exactly_one_day_is_dropped() {
        assert!(segment_ranges(&vec![true; DAY], 1.0).is_empty());
        assert_eq!(segment_ranges(&vec![true; DAY + 1], 1.0).len(), 1);
    }

    #[test]
    fn aligned_uses_union_of_gaps() {
        let a = with_gap(2 * DAY, 100, 5);
        let b = with_gap(2 * DAY, DAY, 30);
        let out = preprocess_aligned(&[a, b]).unwrap();
        assert!(out.pieces.is_empty());

        let a = with_gap(3 * DAY, 100, 5);
        let b = with_gap(3 * DAY, 2 * DAY + 10_000, 30);
        let out = preprocess_aligned(&[a, b]).unwrap();
        assert_eq!(out.ranges, vec![0..2 * DAY + 10_000]);
        assert_eq!(out.pieces[0].len(), 2);
        assert_eq!(out.pieces[0][1].missing_count(), 0);
    }
}
