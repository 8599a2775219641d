use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nilm_cli::{
    cmd_eval, cmd_preprocess, cmd_sweep, cmd_synth, cmd_train, Axis, EvalOptions, Overrides, RunConfig, SynthOptions,
};
use nilm_core::models::Variant;
use nilm_core::nn::loss::LossMode;
use nilm_core::Result;

#[derive(Parser)]
#[command(name = "nilm", version, about = "Train and evaluate gated energy disaggregation networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic household with per-appliance ground truth.
    Synth {
        /// Household spec (TOML); the builtin household when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        days: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        test_days: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split at gaps, backfill short ones and drop short pieces.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per appliance.
    Train(RunArgs),
    /// Score trained models (or a directory of predictions) on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Directory of `<appliance>.csv` prediction channels.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        no_plots: bool,
    },
    /// Train and evaluate once per output length or context width.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_axis)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long, value_parser = parse_loss_mode)]
    loss_mode: Option<LossMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Restrict to these appliances (repeatable).
    #[arg(long = "appliance")]
    appliances: Vec<String>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: nilm_core::NilmError| e.to_string())
}

fn parse_loss_mode(s: &str) -> std::result::Result<LossMode, String> {
    s.parse().map_err(|e: nilm_core::NilmError| e.to_string())
}

fn parse_axis(s: &str) -> std::result::Result<Axis, String> {
    s.parse().map_err(|e: nilm_core::NilmError| e.to_string())
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(Overrides {
            manifest: self.manifest,
            variant: self.variant,
            loss_mode: self.loss_mode,
            seed: self.seed,
            steps: self.steps,
            out: self.out,
            s: self.s,
            w: self.w,
            lr: self.lr,
            appliances: (!self.appliances.is_empty()).then_some(self.appliances),
        });
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            out,
            days,
            test_days,
            seed,
        } => {
            let res = cmd_synth(spec.as_deref(), &out, &SynthOptions { days, seed, test_days })?;
            println!("wrote {} channels and {}", res.channels.len(), res.manifest.display());
        }
        Command::Preprocess { manifest, out } => {
            let report = cmd_preprocess(&manifest, &out)?;
            for (role, pieces) in &report.pieces {
                let samples: usize = pieces.iter().map(|p| p.samples).sum();
                println!("{role}: {} pieces, {samples} samples", pieces.len());
            }
            println!("wrote {}", report.manifest.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            for t in cmd_train(&cfg)? {
                let loss = t.final_loss.map_or_else(|| "-".to_string(), |l| format!("{l:.6}"));
                println!("{}: final loss {loss}, checkpoint {}", t.appliance, t.checkpoint.display());
            }
        }
        Command::Eval {
            run,
            predictions,
            no_plots,
        } => {
            let cfg = run.resolve()?;
            let report = cmd_eval(
                &cfg,
                &EvalOptions {
                    predictions,
                    plots: !no_plots,
                },
            )?;
            for (name, m) in &report.appliances {
                println!("{name}: MAE {:.3} W", m.mae_watts);
            }
        }
        Command::Sweep { run, axis, values } => {
            let cfg = run.resolve()?;
            let res = cmd_sweep(&cfg, axis, &values)?;
            for (v, why) in &res.skipped {
                eprintln!("note: {}={v} skipped: {why}", axis.name());
            }
            println!("wrote {} rows to {}", res.rows.len(), res.csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            eprintln!("error [{}]: {e}", class.name());
            ExitCode::from(class.exit_code() as u8)
        }
    }
}
