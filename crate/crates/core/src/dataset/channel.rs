//! Power channels and the two-column CSV format they are stored in.
//!
//! A channel file has one `timestamp_unix_seconds,watts` row per present
//! sample, optionally preceded by a header row. Missing samples are the
//! timestamps the file skips.

use std::fs::File;
use std::path::Path;

use crate::error::{config_err, data_err, NilmError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSeries {
    sample_period: f64,
    start_time: f64,
    samples: Vec<Option<f64>>,
}

impl ChannelSeries {
    pub fn new(sample_period: f64, start_time: f64, samples: Vec<Option<f64>>) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(config_err!("sample period must be positive, got {sample_period}"));
        }
        if !start_time.is_finite() {
            return Err(config_err!("start time must be finite"));
        }
        if let Some(bad) = samples.iter().flatten().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(data_err!("power values must be finite and non-negative, got {bad}"));
        }
        Ok(ChannelSeries {
            sample_period,
            start_time,
            samples,
        })
    }

    /// A gap-free series.
    pub fn from_values(sample_period: f64, start_time: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(sample_period, start_time, values.into_iter().map(Some).collect())
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Option<f64>] {
        &self.samples
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.sample_period
    }

    /// Wall-clock span covered, counting one period per sample.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_period
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_none()).count()
    }

    /// All values, failing if any sample is missing.
    pub fn values(&self) -> Result<Vec<f64>> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| data_err!("sample {i} is missing")))
            .collect()
    }

    pub fn present_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().flatten().copied()
    }

    pub fn slice(&self, start: usize, end: usize) -> ChannelSeries {
        ChannelSeries {
            sample_period: self.sample_period,
            start_time: self.time_at(start),
            samples: self.samples[start..end].to_vec(),
        }
    }

    /// Index of the sample at `time`, if it lies on this series' grid.
    fn grid_index(&self, time: f64) -> f64 {
        ((time - self.start_time) / self.sample_period).round()
    }
}

/// Reads a channel CSV sampled every `sample_period` seconds. Timestamps
/// that skip ahead leave missing samples behind.
pub fn load_channel(path: &Path, sample_period: f64) -> Result<ChannelSeries> {
    if !(sample_period > 0.0) {
        return Err(config_err!("sample period must be positive, got {sample_period}"));
    }
    let file = File::open(path).map_err(|e| NilmError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);

    let parse_err = |line: usize, message: String| NilmError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut start: Option<f64> = None;
    let mut last_time = f64::NEG_INFINITY;
    let mut samples: Vec<Option<f64>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(row + 1, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(row + 1, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_err(line, format!("expected 2 columns, found {}", record.len())));
        }
        let time = record[0].parse::<f64>();
        if row == 0 && time.is_err() {
            continue; // header
        }
        let time = time.map_err(|_| parse_err(line, format!("bad timestamp {:?}", &record[0])))?;
        let watts: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad power value {:?}", &record[1])))?;
        if !time.is_finite() || !watts.is_finite() {
            return Err(parse_err(line, "non-finite value".into()));
        }
        if watts < 0.0 {
            return Err(parse_err(line, format!("negative power {watts}")));
        }
        if time <= last_time {
            return Err(data_err!(
                "{}:{line}: timestamps must increase ({time} after {last_time})",
                path.display()
            ));
        }
        last_time = time;
        let origin = *start.get_or_insert(time);
        let index = ((time - origin) / sample_period).round() as usize;
        if index < samples.len() {
            return Err(data_err!(
                "{}:{line}: two samples fall in the same {sample_period} s period",
                path.display()
            ));
        }
        samples.resize(index, None);
        samples.push(Some(watts));
    }
    let Some(start) = start else {
        return Err(data_err!("{} contains no samples", path.display()));
    };
    ChannelSeries::new(sample_period, start, samples)
}

/// Writes present samples in the channel CSV format, with a header row.
pub fn write_channel(path: &Path, series: &ChannelSeries) -> Result<()> {
    let io = |e: csv::Error| NilmError::io(path, e.into());
    let mut writer = csv::Writer::from_path(path).map_err(io)?;
    writer.write_record(["timestamp_unix_seconds", "watts"]).map_err(io)?;
    for (i, value) in series.samples.iter().enumerate() {
        if let Some(v) = value {
            writer
                .write_record([series.time_at(i).to_string(), v.to_string()])
                .map_err(io)?;
        }
    }
    writer.flush().map_err(|e| NilmError::io(path, e))
}

/// Crops channels sharing one sample period to their common time span.
pub fn align(channels: &[ChannelSeries]) -> Result<Vec<ChannelSeries>> {
    let Some(first) = channels.first() else {
        return Ok(Vec::new());
    };
    let period = first.sample_period;
    for c in channels {
        if (c.sample_period - period).abs() > 1e-9 * period {
            return Err(config_err!(
                "channels must share a sample period ({} vs {period}); resample them first",
                c.sample_period
            ));
        }
    }
    let start = channels.iter().map(|c| c.start_time).fold(f64::MIN, f64::max);
    let end = channels
        .iter()
        .map(|c| c.start_time + c.duration())
        .fold(f64::MAX, f64::min);
    if end - start < period {
        return Err(data_err!("channels do not overlap in time"));
    }
    channels
        .iter()
        .map(|c| {
            let lo = c.grid_index(start);
            if ((c.start_time + lo * period) - start).abs() > 1e-6 * period.max(1.0) {
                return Err(config_err!("channel sample grids are offset from each other"));
            }
            let n = ((end - start) / period).round() as usize;
            let lo = lo as usize;
            Ok(c.slice(lo, (lo + n).min(c.len())))
        })
        .collect()
}

/// Restricts a series to samples with `start <= time < end`.
pub fn crop_time(series: &ChannelSeries, start: Option<f64>, end: Option<f64>) -> ChannelSeries {
    let lo = start.map_or(0, |t| {
        ((t - series.start_time) / series.sample_period).ceil().max(0.0) as usize
    });
    let hi = end.map_or(series.len(), |t| {
        ((t - series.start_time) / series.sample_period).ceil().max(0.0) as usize
    });
    let hi = hi.min(series.len());
    let lo = lo.min(hi);
    series.slice(lo, hi)
}
