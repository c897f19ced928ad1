//! Visuotactile imitation learning with an SE(3) rectified-flow policy.
//!
//! The crate is organized bottom-up:
//!
//! * [`liegroup`] SO(3)/SE(3) primitives.
//! * [`flowmatch`] flow path, velocity targets, samplers and baseline objectives.
//! * [`policynet`] the multimodal transformer, its encoders, training and checkpoints.
//! * [`simenv`] the planar match-striking simulator and scripted expert.
//! * [`datastore`] episode files, normalization and training examples.
//! * [`harness`] demo generation, training, rollouts, evaluation and attention dumps.
//!
//! Batch-level loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and runs sequentially otherwise.

pub mod datastore;
pub mod config;
pub mod error;
pub mod flowmatch;
pub mod harness;
pub mod liegroup;
pub mod par;
pub mod policynet;
pub mod simenv;

pub use error::{Error, Result};
