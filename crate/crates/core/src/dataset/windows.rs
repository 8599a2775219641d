//! Context-padded windows over aligned, normalized series.
//!
//! A window at origin `t` takes the aggregate over `[t - w, t + s + w)` as
//! input and the appliance over `[t, t + s)` as target. Positions outside
//! the series read as zero (normalized units).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, Result};
use crate::tensor::Tensor;

/// Output length `s` and one-sided context `w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub s: usize,
    pub w: usize,
}

impl Geometry {
    pub fn new(s: usize, w: usize) -> Result<Self> {
        if s == 0 {
            return Err(config_err!("output length s must be at least 1"));
        }
        Ok(Geometry { s, w })
    }

    /// `s + 2w`.
    pub fn input_len(&self) -> usize {
        self.s + 2 * self.w
    }

    /// REDD-style defaults.
    pub fn redd() -> Self {
        Geometry { s: 64, w: 400 }
    }

    /// UK-DALE-style defaults.
    pub fn ukdale() -> Self {
        Geometry { s: 32, w: 200 }
    }
}

/// One contiguous, gap-free stretch of aligned data.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Normalized aggregate.
    pub aggregate: Vec<f64>,
    /// Normalized appliance power.
    pub target: Vec<f64>,
    /// On/off labels computed from raw watts.
    pub labels: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowOrigin {
    pub segment: usize,
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedBatch {
    /// `[batch, s + 2w]`
    pub inputs: Tensor,
    /// `[batch, s]`
    pub targets: Tensor,
    /// `[batch, s]`, 0/1
    pub labels: Tensor,
    /// Appliance power over the whole input span, `[batch, s + 2w]`.
    pub context_targets: Tensor,
    pub origins: Vec<WindowOrigin>,
}

impl WindowedBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct WindowSource {
    geometry: Geometry,
    segments: Vec<Segment>,
    /// Number of valid origins in each segment (`len - s + 1`).
    origin_counts: Vec<usize>,
}

impl WindowSource {
    pub fn new(geometry: Geometry, segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(data_err!("no data segments to window"));
        }
        let mut origin_counts = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            let n = seg.aggregate.len();
            if seg.target.len() != n || seg.labels.len() != n {
                return Err(config_err!("segment {i}: aggregate, target and labels differ in length"));
            }
            if n < geometry.s {
                return Err(data_err!(
                    "segment {i} has {n} samples, fewer than the output length {}",
                    geometry.s
                ));
            }
            origin_counts.push(n - geometry.s + 1);
        }
        Ok(WindowSource {
            geometry,
            segments,
            origin_counts,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn num_origins(&self) -> usize {
        self.origin_counts.iter().sum()
    }

    /// Origins `0, stride, 2*stride, ...` of every segment whose target
    /// span fits inside the segment.
    pub fn strided_origins(&self, stride: usize) -> Vec<WindowOrigin> {
        let stride = stride.max(1);
        self.origin_counts
            .iter()
            .enumerate()
            .flat_map(|(segment, &count)| {
                (0..count)
                    .step_by(stride)
                    .map(move |start| WindowOrigin { segment, start })
            })
            .collect()
    }

    pub fn batch(&self, origins: &[WindowOrigin]) -> Result<WindowedBatch> {
        let Geometry { s, w } = self.geometry;
        let len = self.geometry.input_len();
        let b = origins.len();
        if b == 0 {
            return Err(config_err!("empty batch"));
        }
        let mut inputs = vec![0.0; b * len];
        let mut context = vec![0.0; b * len];
        let mut targets = Vec::with_capacity(b * s);
        let mut labels = Vec::with_capacity(b * s);
        for (row, o) in origins.iter().enumerate() {
            let seg = self
                .segments
                .get(o.segment)
                .ok_or_else(|| config_err!("no segment {}", o.segment))?;
            if o.start + s > seg.aggregate.len() {
                return Err(config_err!("origin {} leaves the segment", o.start));
            }
            copy_padded(&seg.aggregate, o.start as isize - w as isize, &mut inputs[row * len..(row + 1) * len]);
            copy_padded(&seg.target, o.start as isize - w as isize, &mut context[row * len..(row + 1) * len]);
            targets.extend_from_slice(&seg.target[o.start..o.start + s]);
            labels.extend_from_slice(&seg.labels[o.start..o.start + s]);
        }
        Ok(WindowedBatch {
            inputs: Tensor::new(&[b, len], inputs)?,
            targets: Tensor::new(&[b, s], targets)?,
            labels: Tensor::new(&[b, s], labels)?,
            context_targets: Tensor::new(&[b, len], context)?,
            origins: origins.to_vec(),
        })
    }

    /// Uniformly random origins over all segments.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, batch_size: usize) -> Result<WindowedBatch> {
        let total = self.num_origins();
        let origins: Vec<WindowOrigin> = (0..batch_size)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                let mut segment = 0;
                while k >= self.origin_counts[segment] {
                    k -= self.origin_counts[segment];
                    segment += 1;
                }
                WindowOrigin { segment, start: k }
            })
            .collect();
        self.batch(&origins)
    }

    /// Batches of up to `batch_size` windows at the given stride, in order.
    pub fn windows(&self, stride: usize, batch_size: usize) -> impl Iterator<Item = Result<WindowedBatch>> + '_ {
        let origins = self.strided_origins(stride);
        let batch_size = batch_size.max(1);
        (0..origins.len())
            .step_by(batch_size)
            .map(move |i| self.batch(&origins[i..(i + batch_size).min(origins.len())]))
    }
}

/// Fills `out` with `src[offset..offset + out.len()]`, zero outside `src`.
fn copy_padded(src: &[f64], offset: isize, out: &mut [f64]) {
    for (i, slot) in out.iter_mut().enumerate() {
        let j = offset + i as isize;
        *slot = if j >= 0 && (j as usize) < src.len() {
            src[j as usize]
        } else {
            0.0
        };
    }
}

/// Windows over a single aligned series, `batch_size` at a time.
pub fn make_windows(
    aggregate: &[f64],
    appliance: &[f64],
    labels: &[f64],
    geometry: Geometry,
    stride: usize,
    batch_size: usize,
) -> Result<Vec<WindowedBatch>> {
    let source = WindowSource::new(
        geometry,
        vec![Segment {
            aggregate: aggregate.to_vec(),
            target: appliance.to_vec(),
            labels: labels.to_vec(),
        }],
    )?;
    source.windows(stride, batch_size).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(n: usize) -> Vec<f64> {
        (1..=n).map(|v| v as f64).collect()
    }

    #[test]
    fn input_length_is_s_plus_two_w() {
        let g = Geometry::new(32, 200).unwrap();
        assert_eq!(g.input_len(), 432);
        let x = ramp(500);
        let batches = make_windows(&x, &x, &vec![0.0; 500], g, 32, 4).unwrap();
        for b in &batches {
            assert_eq!(b.inputs.shape()[1], 432);
            assert_eq!(b.targets.shape()[1], 32);
        }
    }

    #[test]
    fn zero_context_input_equals_target_span() {
        let x = ramp(10);
        let y: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
        let g = Geometry::new(4, 0).unwrap();
        let b = make_windows(&x, &y, &[0.0; 10], g, 4, 8).unwrap();
        assert_eq!(b[0].inputs.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(b[0].targets.data(), &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0]);
    }

    #[test]
    fn leading_context_is_zero_padded() {
        let x = ramp(8);
        let g = Geometry::new(2, 2).unwrap();
        let b = make_windows(&x, &x, &[0.0; 8], g, 2, 1).unwrap();
        assert_eq!(b[0].inputs.data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let last = b.last().unwrap();
        assert_eq!(last.inputs.data(), &[5.0, 6.0, 7.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn too_short_is_data_error() {
        let g = Geometry::new(16, 0).unwrap();
        assert!(matches!(
            make_windows(&ramp(10), &ramp(10), &[0.0; 10], g, 16, 1),
            Err(crate::error::NilmError::Data(_))
        ));
    }

    #[test]
    fn stride_s_tiles_targets_exactly() {
        let x = ramp(103);
        let g = Geometry::new(10, 3).unwrap();
        let batches = make_windows(&x, &x, &[0.0; 103], g, 10, 3).unwrap();
        let joined: Vec<f64> = batches.iter().flat_map(|b| b.targets.data().to_vec()).collect();
        assert_eq!(joined, x[..100].to_vec());
    }

    #[test]
    fn random_batches_are_deterministic() {
        let seg = Segment {
            aggregate: ramp(50),
            target: ramp(50),
            labels: vec![1.0; 50],
        };
        let src = WindowSource::new(Geometry::new(5, 2).unwrap(), vec![seg.clone(), seg]).unwrap();
        assert_eq!(src.num_origins(), 92);
        let a = src.sample_batch(&mut ChaCha8Rng::seed_from_u64(1), 16).unwrap();
        let b = src.sample_batch(&mut ChaCha8Rng::seed_from_u64(1), 16).unwrap();
        assert_eq!(a, b);
        assert!(a.origins.iter().all(|o| o.start + 5 <= 50));
    }
}
