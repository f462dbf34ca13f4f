//! Deterministic core of an audio-language-model data and serving stack.
//!
//! Everything here runs without a neural network: model components are
//! reached through small backend traits, and deterministic mocks are provided
//! for each so every procedure can be exercised and tested on a laptop.
//!
//! - [`refine`]: diarization post-processing (cluster merging, chunk
//!   reassignment, segment merging).
//! - [`annotate`]: language routing, pause-based punctuation, enhancement choice.
//! - [`sequencer`]: pre-training and SFT sequence construction plus the
//!   `KAFSEQ1` container format.
//! - [`stream`]: chunk-wise streaming detokenizer scheduling with look-ahead.
//! - [`orchestrator`]: conversation rounds, history, and persistence.
//! - [`pipeline`]: manifests, run configuration, and the batch commands behind
//!   the `kaf` binary.

pub mod annotate;
pub mod domain;
pub mod error;
pub mod fixture;
pub mod frames;
pub mod orchestrator;
pub mod parallel;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod sequencer;
pub mod stream;

pub use error::{Error, Result};
