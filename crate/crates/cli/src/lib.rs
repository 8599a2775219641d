//! Batch pipeline behind the `nilm` binary: synthesize data, preprocess
//! it, train a model per appliance, evaluate, and sweep window geometry.

mod commands;
pub mod config;

pub use commands::{
    checkpoint_path, cmd_eval, cmd_preprocess, cmd_sweep, cmd_synth, cmd_train, log_path, Axis, EvalOptions,
    PieceSummary, PreprocessReport, SweepOutcome, SweepRow, SynthOptions, SynthOutput, TrainedAppliance,
    REPORT_FILE,
};
pub use config::{Arch, Overrides, Preset, RunConfig};
