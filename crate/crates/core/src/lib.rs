//! Energy disaggregation with gated regression and on/off classification subnetworks.
//!
//! A regression subnetwork estimates appliance power from a window of the
//! aggregate mains signal, and an on/off classification subnetwork gates that
//! estimate. The crate contains everything needed to train and evaluate these
//! models on a CPU: a small reverse-mode autodiff engine, the network
//! variants and baselines, the data pipeline, a synthetic household
//! generator and the evaluation metrics.

pub mod autodiff;
pub mod dataset;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod plot;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{BufferPool, Gradients, Tape, Var};
pub use error::{ErrorClass, NilmError, Result};
pub use tensor::Tensor;
