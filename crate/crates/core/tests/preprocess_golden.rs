//! Split / backfill / filter on generated recordings, compared with golden
//! summaries in `tests/golden`. Recordings are sampled every 5 s, so a
//! 10 s hole is two missing samples and a 25 s hole is five.

use std::collections::BTreeSet;
use std::path::Path;

use nilm_core::dataset::{load_channel, preprocess_redd, write_channel, ChannelSeries};
use serde_json::{json, Value};

const PERIOD: f64 = 5.0;
const T0: f64 = 1_600_000_000.0;

fn watts(i: usize) -> f64 {
    (i * 7919 % 1000) as f64 / 4.0
}

fn recording(n: usize, missing: &BTreeSet<usize>) -> ChannelSeries {
    let samples = (0..n).map(|i| (!missing.contains(&i)).then(|| watts(i))).collect();
    ChannelSeries::new(PERIOD, T0, samples).unwrap()
}

/// Round-trips through the CSV format, preprocesses, and summarizes each
/// kept piece with the samples that were filled in.
fn summarize(dir: &Path, n: usize, missing: &BTreeSet<usize>) -> Value {
    let path = dir.join("channel.csv");
    write_channel(&path, &recording(n, missing)).unwrap();
    let loaded = load_channel(&path, PERIOD).unwrap();
    let pieces: Vec<Value> = preprocess_redd(&loaded)
        .iter()
        .map(|p| {
            let first = ((p.start_time() - T0) / PERIOD).round() as usize;
            let values = p.values().unwrap();
            let filled: Vec<Value> = (0..p.len())
                .filter(|k| missing.contains(&(first + k)))
                .map(|k| json!([p.time_at(k), values[k]]))
                .collect();
            for (k, v) in values.iter().enumerate() {
                if !missing.contains(&(first + k)) {
                    assert_eq!(*v, watts(first + k), "present samples pass through");
                }
            }
            json!({
                "start_time": p.start_time(),
                "end_time": p.time_at(p.len() - 1),
                "samples": p.len(),
                "filled": filled,
            })
        })
        .collect();
    json!({ "sample_period": PERIOD, "pieces": pieces })
}

fn golden(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/preprocess_{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ten_second_hole_is_backfilled() {
    let dir = tempfile::tempdir().unwrap();
    let missing = BTreeSet::from([20_000, 20_001]);
    assert_eq!(summarize(dir.path(), 40_000, &missing), golden("gap_10s"));
}

#[test]
fn twenty_five_second_hole_splits() {
    let dir = tempfile::tempdir().unwrap();
    let missing: BTreeSet<usize> = (20_000..20_005).collect();
    assert_eq!(summarize(dir.path(), 40_000, &missing), golden("gap_25s"));
}

/// Pieces of 10000 samples (under a day), 20000 (kept), exactly one day
/// (dropped) and one day plus a sample (kept, with a 15 s hole filled),
/// separated by holes of an hour, two days and exactly 20 s.
#[test]
fn multi_day_recording_keeps_only_long_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let missing: BTreeSet<usize> = (10_000..10_720)
        .chain(30_720..65_280)
        .chain(82_560..82_564)
        .chain(90_000..90_003)
        .collect();
    assert_eq!(summarize(dir.path(), 99_845, &missing), golden("multi_day"));
}
