//! Nonlinear state-space system identification with subspace-encoder
//! model augmentation.
//!
//! The crate provides:
//! - linear and innovation-form state reconstruction from stacked I/O
//!   windows ([`reconstruct`]),
//! - linearisation of nonlinear baseline models around an equilibrium
//!   ([`linearize`]),
//! - a small neural-network engine with reverse-mode gradients through
//!   model rollouts ([`neural`]),
//! - encoder initialisation strategies: model-based, least-squares and
//!   pretrained ([`encoder_init`]),
//! - the augmented state-space model and its trainer ([`augmented`]),
//! - a reproducible 2-DOF mass-spring-damper benchmark ([`msd`]).

pub mod augmented;
pub mod baseline;
pub mod data;
pub mod encoder_init;
pub mod error;
pub mod linearize;
pub mod lti;
pub mod msd;
pub mod neural;
pub mod reconstruct;
pub mod rng;

pub use baseline::{Baseline, TapeBaseline};
pub use data::{make_window, IoDataset, StackedWindow};
pub use error::{Error, Result};
pub use lti::{observability_rank, LtiSS};
pub use reconstruct::ReconstructabilityMaps;
pub use rng::RngStream;
