//! Two-stage training for worst-group robustness without training-time
//! group labels.
//!
//! Stage 1 trains a classifier together with a learnable logit offset per
//! training example ([`auxvar`]); the offsets soak up hard examples so the
//! network leans harder on easy shortcuts. The examples that biased model
//! gets wrong form an error set, which is upsampled `μ` times while Stage 2
//! keeps training ([`pipeline`]). Stage-2 epochs are picked either by
//! validation worst-group accuracy or, with no group labels at all, by the
//! smallest gap between per-class validation accuracies ([`metrics`]).
//!
//! Everything runs on synthetic spurious-correlation data ([`data`]) with a
//! small dependency-free MLP ([`model`], [`numkit`]).

pub mod analysis;
pub mod auxvar;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod pipeline;
pub mod rng;

pub use config::{Criterion, ExperimentConfig, RunConfig, Stage2Mode};
pub use data::{DatasetSpec, SplitDataset};
pub use error::{Error, Result};
pub use model::ModelParams;
pub use pipeline::{run_experiment, RunSummary};
