//! Training loop, evaluation-time reconstruction and the metadata stored
//! alongside checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BufferPool, Tape};
use crate::dataset::labels::label_on_off;
use crate::dataset::manifest::HouseData;
use crate::dataset::norm::{compute_norm_values, NormStats};
use crate::dataset::windows::{Geometry, Segment, WindowSource, WindowedBatch};
use crate::error::{config_err, data_err, NilmError, Result};
use crate::metrics::ApplianceMetrics;
use crate::models::{Disaggregator, SubnetworkConfig, Variant};
use crate::nn::checkpoint::{Checkpoint, RngState};
use crate::nn::loss::LossMode;
use crate::nn::optim::{adam_step_recycling, AdamConfig, AdamState};
use crate::nn::params::ParameterSet;

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_LOG_EVERY: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub log_every: usize,
    /// Where to write the offending batch if training hits NaN/Inf.
    pub dump_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: DEFAULT_BATCH_SIZE,
            adam: AdamConfig::default(),
            loss_mode: LossMode::Joint,
            seed: 0,
            log_every: DEFAULT_LOG_EVERY,
            dump_dir: None,
        }
    }
}

/// Mean losses over the steps since the previous record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub output_loss: f64,
    pub on_loss: Option<f64>,
}

impl LogRecord {
    pub const TSV_HEADER: &'static str = "step\tloss\toutput_loss\ton_loss";

    pub fn to_tsv(&self) -> String {
        let on = self.on_loss.map_or_else(|| "-".to_string(), |v| format!("{v:e}"));
        format!("{}\t{:e}\t{:e}\t{on}", self.step, self.loss, self.output_loss)
    }
}

pub struct TrainOutcome {
    pub params: ParameterSet,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
    pub log: Vec<LogRecord>,
    /// Total loss of the last step, if any step ran.
    pub final_loss: Option<f64>,
}

struct StepLosses {
    total: f64,
    output: f64,
    on: Option<f64>,
}

fn train_step(
    model: &dyn Disaggregator,
    params: &mut ParameterSet,
    adam: &mut AdamState,
    pool: &mut BufferPool,
    batch: &WindowedBatch,
    mode: LossMode,
) -> Result<StepLosses> {
    let (losses, mut grads, bound) = {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(batch.inputs.clone());
        let out = model.forward(&mut tape, &bound, x)?;
        let terms = model.training_loss(&mut tape, &out, batch, mode)?;
        let losses = StepLosses {
            total: tape.item(terms.total)?,
            output: tape.item(terms.output)?,
            on: terms.on.map(|v| tape.item(v)).transpose()?,
        };
        if !losses.total.is_finite() {
            return Err(NilmError::NonFinite(format!("loss is {}", losses.total)));
        }
        (losses, tape.backward_with_pool(terms.total, pool)?, bound)
    };
    params.absorb(&mut grads, &bound)?;
    adam_step_recycling(params, adam, pool)?;
    Ok(losses)
}

#[derive(Serialize)]
struct BatchDump<'a> {
    step: usize,
    error: String,
    origins: Vec<(usize, usize)>,
    input_shape: &'a [usize],
    inputs: &'a [f64],
    targets: &'a [f64],
    labels: &'a [f64],
}

fn dump_batch(dir: &Path, step: usize, error: &NilmError, batch: &WindowedBatch) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| NilmError::io(dir, e))?;
    let path = dir.join(format!("nonfinite_step{step}.json"));
    let dump = BatchDump {
        step,
        error: error.to_string(),
        origins: batch.origins.iter().map(|o| (o.segment, o.start)).collect(),
        input_shape: batch.inputs.shape(),
        inputs: batch.inputs.data(),
        targets: batch.targets.data(),
        labels: batch.labels.data(),
    };
    // serde_json writes non-finite floats as null, which is what a dump wants
    let text = serde_json::to_string(&dump).map_err(|e| data_err!("batch dump: {e}"))?;
    fs::write(&path, text).map_err(|e| NilmError::io(&path, e))?;
    Ok(path)
}

/// Trains from a fresh initialization. Parameters are drawn first from a
/// ChaCha stream seeded with `cfg.seed`; batches follow from the same
/// stream, so a seed fixes the whole run.
pub fn train(
    model: &dyn Disaggregator,
    source: &WindowSource,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(config_err!("batch size must be positive"));
    }
    if source.geometry() != model.geometry() {
        return Err(config_err!(
            "data windows {:?} do not match the model geometry {:?}",
            source.geometry(),
            model.geometry()
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.init_params(&mut rng)?;
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut pool = BufferPool::new();
    let mut log = Vec::new();
    let mut final_loss = None;
    let (mut sum_total, mut sum_output, mut sum_on, mut count) = (0.0, 0.0, 0.0, 0usize);
    let every = cfg.log_every.max(1);

    for step in 1..=cfg.steps {
        let batch = source.sample_batch(&mut rng, cfg.batch_size)?;
        let losses = match train_step(model, &mut params, &mut adam, &mut pool, &batch, cfg.loss_mode) {
            Ok(l) => l,
            Err(e @ NilmError::NonFinite(_)) => {
                let msg = match &cfg.dump_dir {
                    Some(dir) => format!("step {step}: {e}; batch written to {}", dump_batch(dir, step, &e, &batch)?.display()),
                    None => format!("step {step}: {e}"),
                };
                return Err(NilmError::NonFinite(msg));
            }
            Err(e) => return Err(e),
        };
        sum_total += losses.total;
        sum_output += losses.output;
        sum_on += losses.on.unwrap_or(0.0);
        count += 1;
        final_loss = Some(losses.total);
        if step % every == 0 || step == cfg.steps {
            let n = count as f64;
            let record = LogRecord {
                step,
                loss: sum_total / n,
                output_loss: sum_output / n,
                on_loss: losses.on.map(|_| sum_on / n),
            };
            on_log(&record);
            log.push(record);
            (sum_total, sum_output, sum_on, count) = (0.0, 0.0, 0.0, 0);
        }
    }
    Ok(TrainOutcome {
        params,
        adam,
        rng,
        log,
        final_loss,
    })
}

/// Shared scale for a house, fitted on its training aggregate.
pub fn fit_norm(train: &HouseData) -> Result<NormStats> {
    compute_norm_values(&train.all_aggregate())
}

/// Windows for one appliance, plus its raw watts for scoring.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub source: WindowSource,
    pub truth_watts: Vec<Vec<f64>>,
    pub stats: NormStats,
}

pub fn prepare(house: &HouseData, appliance: &str, stats: NormStats, threshold: f64, geometry: Geometry) -> Result<Prepared> {
    let mut segments = Vec::with_capacity(house.segments.len());
    let mut truth = Vec::with_capacity(house.segments.len());
    for seg in &house.segments {
        let watts = seg
            .appliances
            .get(appliance)
            .ok_or_else(|| config_err!("no appliance channel named {appliance:?}"))?;
        segments.push(Segment {
            aggregate: stats.normalize_values(&seg.aggregate),
            target: stats.normalize_values(watts),
            labels: label_on_off(watts, threshold)?,
        });
        truth.push(watts.clone());
    }
    Ok(Prepared {
        source: WindowSource::new(geometry, segments)?,
        truth_watts: truth,
        stats,
    })
}

/// Ground truth and predictions over the stride-`s` tiling of every
/// segment, in watts.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    /// On probabilities aligned with `prediction`, for gated variants.
    pub o_hat: Option<Vec<f64>>,
}

/// Tiles each segment with stride `s`, predicts every tile, denormalizes
/// and clamps negative watts to zero. Trailing samples that do not fill a
/// tile are left out.
pub fn reconstruct(
    model: &dyn Disaggregator,
    params: &ParameterSet,
    data: &Prepared,
    batch_size: usize,
) -> Result<Reconstruction> {
    let s = model.geometry().s;
    let mut truth = Vec::new();
    let mut prediction = Vec::new();
    let mut o_hat: Option<Vec<f64>> = None;
    for batch in data.source.windows(s, batch_size) {
        let batch = batch?;
        let pred = model.predict(params, batch.inputs.clone())?;
        for (row, origin) in batch.origins.iter().enumerate() {
            let seg = &data.truth_watts[origin.segment];
            truth.extend_from_slice(&seg[origin.start..origin.start + s]);
            let values = &pred.output.data()[row * s..(row + 1) * s];
            prediction.extend(values.iter().map(|&v| (v * data.stats.sigma).max(0.0)));
            if let Some(o) = &pred.o_hat {
                o_hat
                    .get_or_insert_with(Vec::new)
                    .extend_from_slice(&o.data()[row * s..(row + 1) * s]);
            }
        }
    }
    Ok(Reconstruction { truth, prediction, o_hat })
}

pub fn evaluate(
    model: &dyn Disaggregator,
    params: &ParameterSet,
    data: &Prepared,
    deltas: &[usize],
    bins: usize,
) -> Result<(ApplianceMetrics, Reconstruction)> {
    let rec = reconstruct(model, params, data, DEFAULT_BATCH_SIZE)?;
    let metrics = ApplianceMetrics::compute(&rec.truth, &rec.prediction, deltas, rec.o_hat.as_deref(), bins)?;
    Ok((metrics, rec))
}

/// Everything needed to rebuild a trained model next to its weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub variant: Variant,
    pub config: SubnetworkConfig,
    pub appliance: String,
    pub sigma: f64,
    pub threshold_watts: f64,
    pub loss_mode: LossMode,
    pub steps: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
}

impl ModelMeta {
    pub fn checkpoint(&self, outcome: &TrainOutcome) -> Result<Checkpoint> {
        Ok(Checkpoint {
            params: outcome.params.clone(),
            adam: outcome.adam.clone(),
            rng: RngState::capture(&outcome.rng),
            meta: serde_json::to_value(self).map_err(|e| data_err!("checkpoint metadata: {e}"))?,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        serde_json::from_value(ckpt.meta.clone()).map_err(|e| data_err!("checkpoint metadata: {e}"))
    }
}
