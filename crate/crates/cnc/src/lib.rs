//! Coarse-to-fine classifier training driven by confusion statistics.
//!
//! The procedure runs in three steps: train a flat classifier briefly,
//! cluster labels that the model confuses (mean per-class softmax mass,
//! merged by threshold/argmax or L1 agglomeration), retrain against the
//! clustered labels, then classify within clusters through masked parallel
//! branch heads combined under one global softmax. Applied recursively it
//! yields a multi-level label hierarchy.
//!
//! The crate is organized as a library; see the `examples/` directory for
//! one runnable program per capability, and the thin `cnc` binary for the
//! batch interface.

pub mod affinity;
pub mod checkpoint;
pub mod cli;
pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod heads;
pub mod matrix;
pub mod net;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
pub use matrix::Matrix;
