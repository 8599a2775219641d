use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use nilm_core::dataset::{
    load_channel, preprocess_aligned, write_channel, HouseData, Manifest, NormStats, PreprocessMode, Role, SplitSpec,
};
use nilm_core::metrics::{ApplianceMetrics, MetricsReport};
use nilm_core::models::{Disaggregator, ModelRegistry};
use nilm_core::nn::checkpoint::Checkpoint;
use nilm_core::plot::{histogram_chart, line_chart, Series};
use nilm_core::synth::{default_household, generate, HouseholdSpec};
use nilm_core::train::{evaluate, fit_norm, prepare, train, LogRecord, ModelMeta, Reconstruction};
use nilm_core::{NilmError, Result};
use serde::Serialize;

use crate::config::RunConfig;

const SECONDS_PER_DAY: f64 = 86_400.0;
/// Samples shown in the gating-trace plot.
const TRACE_SAMPLES: usize = 2000;

fn usage(msg: String) -> NilmError {
    NilmError::Usage(msg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NilmError::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| NilmError::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    /// Replaces the spec's duration.
    pub days: Option<f64>,
    /// Replaces the spec's seed.
    pub seed: Option<u64>,
    /// Length of the test split at the end of the recording. When the
    /// recording is not longer than this, it is split in half.
    pub test_days: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            days: None,
            seed: None,
            test_days: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub manifest: PathBuf,
    pub channels: Vec<PathBuf>,
    /// First timestamp of the test split.
    pub split_time: f64,
}

/// Generates a household (the builtin one unless `spec` names a TOML
/// household spec) and writes its channels plus a train/test manifest.
pub fn cmd_synth(spec: Option<&Path>, out_dir: &Path, opts: &SynthOptions) -> Result<SynthOutput> {
    let mut household: HouseholdSpec = match spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| NilmError::io(path, e))?;
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => default_household(),
    };
    if let Some(days) = opts.days {
        household.duration_seconds = days * SECONDS_PER_DAY;
    }
    if let Some(seed) = opts.seed {
        household.seed = seed;
    }
    if !(household.duration_seconds > 0.0) || household.num_samples() < 2 {
        return Err(usage(format!(
            "requested duration of {} s yields no data",
            household.duration_seconds
        )));
    }
    if !(opts.test_days > 0.0) {
        return Err(usage(format!("test_days must be positive, got {}", opts.test_days)));
    }
    let house = generate(&household)?;

    create_dir(out_dir)?;
    let mut channels = Vec::new();
    let agg_path = out_dir.join("aggregate.csv");
    write_channel(&agg_path, &house.aggregate)?;
    channels.push(agg_path);
    let mut files = BTreeMap::new();
    for (name, series) in &house.appliances {
        let file = format!("{name}.csv");
        let path = out_dir.join(&file);
        write_channel(&path, series)?;
        channels.push(path);
        files.insert(name.clone(), PathBuf::from(file));
    }

    let n = household.num_samples();
    let test_samples = (opts.test_days * SECONDS_PER_DAY / household.sample_period).round() as usize;
    let train_samples = if test_samples >= n { n / 2 } else { n - test_samples };
    let split_time = house.aggregate.time_at(train_samples);
    let mut manifest = Manifest::new(household.sample_period);
    let split = |start, end| SplitSpec {
        aggregate: PathBuf::from("aggregate.csv"),
        appliances: files.clone(),
        start,
        end,
    };
    manifest.train = Some(split(None, Some(split_time)));
    manifest.test = Some(split(Some(split_time), None));
    let manifest_path = out_dir.join("manifest.toml");
    manifest.save(&manifest_path)?;
    Ok(SynthOutput {
        manifest: manifest_path,
        channels,
        split_time,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PieceSummary {
    pub start_time: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PreprocessReport {
    pub manifest: PathBuf,
    /// Kept pieces per split.
    pub pieces: BTreeMap<String, Vec<PieceSummary>>,
}

/// Applies split / backfill / filter to every split of a manifest and
/// writes the cleaned channels with a manifest that points at them.
/// Running it on its own output changes nothing.
pub fn cmd_preprocess(manifest_path: &Path, out_dir: &Path) -> Result<PreprocessReport> {
    let manifest = Manifest::load(manifest_path)?;
    create_dir(out_dir)?;
    let mut cleaned = Manifest::new(manifest.sample_period);
    cleaned.preprocess = PreprocessMode::Redd;
    cleaned.thresholds = manifest.thresholds.clone();
    let mut pieces = BTreeMap::new();
    for role in [Role::Train, Role::Test] {
        if manifest.split(role).is_err() {
            continue;
        }
        let (aggregate, appliances) = manifest.load_channels(role)?;
        let names: Vec<String> = appliances.keys().cloned().collect();
        let mut channels = vec![aggregate];
        channels.extend(appliances.into_values());
        let result = preprocess_aligned(&channels)?;
        if result.pieces.is_empty() {
            return Err(NilmError::Data(format!(
                "[{}] has no piece longer than a day after preprocessing",
                role.name()
            )));
        }

        let mut files = Vec::with_capacity(channels.len());
        for (c, name) in std::iter::once("aggregate").chain(names.iter().map(String::as_str)).enumerate() {
            // pieces are separated by long gaps, so concatenating them keeps the split points
            let parts: Vec<_> = result.pieces.iter().map(|p| p[c].clone()).collect();
            let file = PathBuf::from(format!("{}_{name}.csv", role.name()));
            write_pieces(&out_dir.join(&file), &parts)?;
            files.push(file);
        }
        let mut files = files.into_iter();
        let spec = SplitSpec {
            aggregate: files.next().expect("aggregate file"),
            appliances: names.into_iter().zip(files).collect(),
            start: None,
            end: None,
        };
        match role {
            Role::Train => cleaned.train = Some(spec),
            Role::Test => cleaned.test = Some(spec),
        }
        pieces.insert(
            role.name().to_string(),
            result.pieces.iter().map(|p| PieceSummary {
                start_time: p[0].start_time(),
                samples: p[0].len(),
            }).collect(),
        );
    }
    let out_manifest = out_dir.join("manifest.toml");
    cleaned.save(&out_manifest)?;
    let report = PreprocessReport {
        manifest: out_manifest,
        pieces,
    };
    let json = serde_json::to_string_pretty(&report).expect("plain data") + "\n";
    write_file(&out_dir.join("preprocess_report.json"), json)?;
    Ok(report)
}

fn write_pieces(path: &Path, parts: &[nilm_core::dataset::ChannelSeries]) -> Result<()> {
    let mut text = String::from("timestamp_unix_seconds,watts\n");
    for part in parts {
        for (i, v) in part.samples().iter().enumerate() {
            if let Some(v) = v {
                text.push_str(&format!("{},{v}\n", part.time_at(i)));
            }
        }
    }
    write_file(path, text)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedAppliance {
    pub appliance: String,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub final_loss: Option<f64>,
}

pub fn checkpoint_path(out: &Path, appliance: &str) -> PathBuf {
    out.join(format!("{appliance}.ckpt"))
}

pub fn log_path(out: &Path, appliance: &str) -> PathBuf {
    out.join(format!("{appliance}.train.tsv"))
}

pub const REPORT_FILE: &str = "report.json";

fn select_appliances(cfg: &RunConfig, data: &HouseData) -> Result<Vec<String>> {
    let available = data.appliance_names();
    if cfg.appliances.is_empty() {
        return Ok(available);
    }
    for name in &cfg.appliances {
        if !available.contains(name) {
            return Err(usage(format!(
                "appliance {name:?} is not in the manifest (has {})",
                available.join(", ")
            )));
        }
    }
    Ok(cfg.appliances.clone())
}

fn build_model(cfg: &RunConfig) -> Result<Box<dyn Disaggregator>> {
    ModelRegistry::builtin().create(cfg.variant.name(), &cfg.subnetwork()?)
}

/// Trains one model per appliance. Writes `<appliance>.ckpt`, appends to
/// `<appliance>.train.tsv` and records the resolved config as `run.toml`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainedAppliance>> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let data = manifest.load_split(Role::Train)?;
    let stats = fit_norm(&data)?;
    let model = build_model(cfg)?;
    let appliances = select_appliances(cfg, &data)?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("run.toml"), cfg.to_toml())?;

    let train_cfg = cfg.train_config();
    let mut trained = Vec::with_capacity(appliances.len());
    for appliance in appliances {
        let threshold = cfg.threshold(&manifest, &appliance);
        let prepared = prepare(&data, &appliance, stats, threshold, model.geometry())?;

        let log = log_path(&cfg.out, &appliance);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(|e| NilmError::io(&log, e))?;
        let fresh = file.metadata().map_err(|e| NilmError::io(&log, e))?.len() == 0;
        if fresh {
            writeln!(file, "{}", LogRecord::TSV_HEADER).map_err(|e| NilmError::io(&log, e))?;
        }
        let mut write_err = None;
        let outcome = train(model.as_ref(), &prepared.source, &train_cfg, |r| {
            if let Err(e) = writeln!(file, "{}", r.to_tsv()) {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(NilmError::io(&log, e));
        }

        let meta = ModelMeta {
            variant: cfg.variant,
            config: model.config().clone(),
            appliance: appliance.clone(),
            sigma: stats.sigma,
            threshold_watts: threshold,
            loss_mode: cfg.loss_mode,
            steps: cfg.steps,
            seed: cfg.seed,
            final_loss: outcome.final_loss,
        };
        let path = checkpoint_path(&cfg.out, &appliance);
        meta.checkpoint(&outcome)?.save(&path)?;
        trained.push(TrainedAppliance {
            appliance,
            checkpoint: path,
            log,
            final_loss: outcome.final_loss,
        });
    }
    Ok(trained)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Directory of `<appliance>.csv` channel files to score instead of
    /// the trained checkpoints.
    pub predictions: Option<PathBuf>,
    pub plots: bool,
}

/// Scores every appliance on the test split and writes `report.json`
/// (plus SVG plots when asked) into the output directory.
pub fn cmd_eval(cfg: &RunConfig, opts: &EvalOptions) -> Result<MetricsReport> {
    cfg.validate()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let data = manifest.load_split(Role::Test)?;
    let appliances = select_appliances(cfg, &data)?;
    create_dir(&cfg.out)?;

    let mut report = MetricsReport::new(match opts.predictions {
        Some(_) => "predictions".to_string(),
        None => cfg.variant.name().to_string(),
    });
    for appliance in appliances {
        let (metrics, rec) = match &opts.predictions {
            Some(dir) => score_predictions(cfg, &data, dir, &appliance)?,
            None => score_checkpoint(cfg, &manifest, &data, &appliance)?,
        };
        if opts.plots {
            write_plots(&cfg.out, &appliance, &metrics, &rec)?;
        }
        report.insert(appliance, metrics)?;
    }
    write_file(&cfg.out.join(REPORT_FILE), report.to_json())?;
    Ok(report)
}

fn score_checkpoint(
    cfg: &RunConfig,
    manifest: &Manifest,
    data: &HouseData,
    appliance: &str,
) -> Result<(ApplianceMetrics, Reconstruction)> {
    let path = checkpoint_path(&cfg.out, appliance);
    let ckpt = Checkpoint::load(&path)?;
    let meta = ModelMeta::from_checkpoint(&ckpt)?;
    let expected = cfg.subnetwork()?;
    let mismatch = |what: &str, have: String, want: String| {
        usage(format!(
            "{}: checkpoint {what} is {have} but the config asks for {want}",
            path.display()
        ))
    };
    if meta.variant != cfg.variant {
        return Err(mismatch("variant", meta.variant.to_string(), cfg.variant.to_string()));
    }
    if meta.config != expected {
        return Err(mismatch("architecture", format!("{:?}", meta.config), format!("{expected:?}")));
    }
    if meta.appliance != appliance {
        return Err(mismatch("appliance", meta.appliance, appliance.to_string()));
    }
    let model = build_model(cfg)?;
    let threshold = cfg.threshold(manifest, appliance);
    let prepared = prepare(data, appliance, NormStats::new(meta.sigma)?, threshold, model.geometry())?;
    evaluate(model.as_ref(), &ckpt.params, &prepared, &cfg.deltas, cfg.histogram_bins)
}

/// Reads a prediction channel at the test split's timestamps.
fn score_predictions(
    cfg: &RunConfig,
    data: &HouseData,
    dir: &Path,
    appliance: &str,
) -> Result<(ApplianceMetrics, Reconstruction)> {
    let path = dir.join(format!("{appliance}.csv"));
    let pred = load_channel(&path, data.sample_period)?;
    let mut truth = Vec::new();
    let mut prediction = Vec::new();
    for seg in &data.segments {
        let offset = ((seg.start_time - pred.start_time()) / data.sample_period).round();
        let watts = &seg.appliances[appliance];
        let values = (offset >= 0.0)
            .then(|| pred.samples().get(offset as usize..offset as usize + watts.len()))
            .flatten()
            .and_then(|s| s.iter().copied().collect::<Option<Vec<f64>>>())
            .ok_or_else(|| {
                NilmError::Data(format!(
                    "{} does not cover the test segment starting at {}",
                    path.display(),
                    seg.start_time
                ))
            })?;
        truth.extend_from_slice(watts);
        prediction.extend(values);
    }
    let metrics = ApplianceMetrics::compute(&truth, &prediction, &cfg.deltas, None, cfg.histogram_bins)?;
    Ok((
        metrics,
        Reconstruction {
            truth,
            prediction,
            o_hat: None,
        },
    ))
}

fn write_plots(out: &Path, appliance: &str, metrics: &ApplianceMetrics, rec: &Reconstruction) -> Result<()> {
    let sae: Vec<(f64, f64)> = metrics.sae_series().into_iter().map(|(d, v)| (d as f64, v)).collect();
    let svg = line_chart(
        &format!("{appliance}: SAE by period"),
        "period (samples)",
        "SAE (W)",
        &[Series::new("SAE", sae)],
        true,
    );
    write_file(&out.join(format!("{appliance}_sae.svg")), svg)?;

    let Some(hist) = &metrics.on_histogram else {
        return Ok(());
    };
    let svg = histogram_chart(
        &format!("{appliance}: on probability (interior {:.3})", hist.interior_fraction),
        "on probability",
        &hist.edges,
        &hist.counts,
    );
    write_file(&out.join(format!("{appliance}_on_hist.svg")), svg)?;

    if let Some(o) = &rec.o_hat {
        let n = rec.truth.len().min(TRACE_SAMPLES);
        let peak = rec.truth[..n].iter().chain(&rec.prediction[..n]).fold(1.0f64, |m, &v| m.max(v));
        let trace = |v: &[f64], scale: f64| (0..n).map(|i| (i as f64, v[i] * scale)).collect();
        let svg = line_chart(
            &format!("{appliance}: gating trace"),
            "sample",
            "W",
            &[
                Series::new("truth", trace(&rec.truth, 1.0)),
                Series::new("output", trace(&rec.prediction, 1.0)),
                Series::new("on prob (scaled)", trace(o, peak)),
            ],
            false,
        );
        write_file(&out.join(format!("{appliance}_gating.svg")), svg)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    S,
    W,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::S => "s",
            Axis::W => "w",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = NilmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(Axis::S),
            "w" => Ok(Axis::W),
            other => Err(usage(format!("sweep axis must be s or w, got {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub s: usize,
    pub w: usize,
    pub mae: BTreeMap<String, f64>,
}

impl SweepRow {
    pub fn mean_mae(&self) -> f64 {
        self.mae.values().sum::<f64>() / self.mae.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Values left out, with the reason.
    pub skipped: Vec<(usize, String)>,
    pub csv: PathBuf,
}

/// Trains and evaluates the base config once per value of `axis`. Each
/// point runs in its own subdirectory; geometries the conv stack cannot
/// handle are skipped with a note.
pub fn cmd_sweep(base: &RunConfig, axis: Axis, values: &[usize]) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(usage("sweep needs at least one value".into()));
    }
    base.validate()?;
    create_dir(&base.out)?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &value in values {
        let mut cfg = base.clone();
        match axis {
            Axis::S => cfg.s = Some(value),
            Axis::W => cfg.w = Some(value),
        }
        cfg.out = base.out.join(format!("{}{value}", axis.name()));
        if let Err(e) = cfg.geometry().and_then(|_| build_model(&cfg)) {
            skipped.push((value, e.to_string()));
            continue;
        }
        cmd_train(&cfg)?;
        let report = cmd_eval(
            &cfg,
            &EvalOptions {
                predictions: None,
                plots: false,
            },
        )?;
        let g = cfg.geometry()?;
        rows.push(SweepRow {
            value,
            s: g.s,
            w: g.w,
            mae: report.appliances.iter().map(|(k, m)| (k.clone(), m.mae_watts)).collect(),
        });
    }

    let names: Vec<String> = rows.first().map(|r| r.mae.keys().cloned().collect()).unwrap_or_default();
    let mut csv = String::from("value,s,w,mae_mean");
    for n in &names {
        csv.push_str(&format!(",mae_{n}"));
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}", r.value, r.s, r.w, r.mean_mae()));
        for n in &names {
            csv.push_str(&format!(",{}", r.mae[n]));
        }
        csv.push('\n');
    }
    let csv_path = base.out.join(format!("sweep_{}.csv", axis.name()));
    write_file(&csv_path, csv)?;
    let notes: String = skipped
        .iter()
        .map(|(v, why)| format!("{}={v} skipped: {why}\n", axis.name()))
        .collect();
    write_file(&base.out.join(format!("sweep_{}_notes.txt", axis.name())), notes)?;

    let series: Vec<Series> = names
        .iter()
        .map(|n| Series::new(n.clone(), rows.iter().map(|r| (r.value as f64, r.mae[n])).collect()))
        .collect();
    let svg = line_chart(
        &format!("MAE by {}", axis.name()),
        axis.name(),
        "MAE (W)",
        &series,
        false,
    );
    write_file(&base.out.join(format!("sweep_{}.svg", axis.name())), svg)?;
    Ok(SweepOutcome {
        rows,
        skipped,
        csv: csv_path,
    })
}
