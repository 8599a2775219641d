//! Parameters, initialization, losses, the Adam optimizer and checkpoints.

pub mod checkpoint;
pub mod init;
pub mod loss;
pub mod optim;
pub mod params;

pub use checkpoint::{Checkpoint, RngState};
pub use init::{he_init, zero_bias};
pub use loss::{loss_joint, loss_on, loss_output, loss_power, LossMode};
pub use optim::{adam_step, adam_step_recycling, AdamConfig, AdamState};
pub use params::{Bound, ParameterSet};
