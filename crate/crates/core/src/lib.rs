//! DIVE-style end-to-end speaker diarization at desk scale.
//!
//! The crate is organized around the pipeline:
//!
//! * [`tensor`] — reverse-mode autodiff engine and Adam optimizer.
//! * [`data`] — synthetic conversation generation, WAV/RTTM ingestion,
//!   frame labeling and multi-window sampling.
//! * [`model`] — the network: temporal encoder, iterative speaker selector
//!   and speaker-conditioned voice-activity head.
//! * [`losses`] — selector NLL, per-speaker VAD loss and its collar-aware
//!   variant.
//! * [`eval`] — DER scoring with collar/overlap handling, contingency and
//!   CDF reporting.
//! * [`checkpoint`], [`config`], [`train`] — persistence and the training
//!   loop driven by the CLI.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
