//! Blind video quality assessment built from multi-source quality features.
//!
//! - [`preproc`]: raw video directories, key frames, chunks, branch geometry
//! - [`gms`]: grid mini-cube fragment sampling
//! - [`features`]: feature sources, RQVF sidecars, toy extractors
//! - [`fusion`]: attention pooling, concatenation, MLP head, PLCC loss, Adam
//! - [`eval`]: SRCC / PLCC, monotonic logistic mapping, challenge score
//! - [`harness`]: manifests, splits, experiments, ensembles, synthetic corpus

pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod gms;
pub mod harness;
pub mod preproc;

pub use error::{Error, Result};
