//! Federated learning simulator that identifies and corrects heterogeneous
//! label noise across clients.
//!
//! Training runs in three stages:
//!
//! 1. **Pre-processing.** Clients are visited one at a time, without
//!    replacement. Each trains locally with mixup and an adaptive proximal
//!    term, then reports the LID score of its prediction vectors. The server
//!    separates noisy from clean clients with a two-component GMM over
//!    cumulative LID scores. Noisy clients split their samples with a second
//!    GMM over per-sample losses, estimate their noise level and relabel
//!    confident large-loss samples.
//! 2. **Finetuning.** FedAvg restricted to clients whose estimated noise is
//!    below a threshold, followed by relabeling of the remaining clients.
//! 3. **Usual training.** FedAvg over every client on the corrected labels.
//!
//! Everything runs in-process on synthetic (or CSV-ingested) tabular data
//! with small classifiers whose gradients are derived by hand.

pub mod config;
pub mod datagen;
pub mod error;
pub mod gmm;
pub mod io;
pub mod lid;
pub mod metrics;
pub mod model;
pub mod protocol;
pub mod runner;
pub mod seed;

pub use config::ExperimentConfig;
pub use datagen::{Dataset, NoiseAssignment, PartitionAssignment};
pub use error::{Error, Result};
pub use model::{Architecture, WeightVector};
pub use protocol::{run_fedavg, run_fedcorr, ExperimentResult};
