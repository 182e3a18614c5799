//! Desk-scale non-intrusive load monitoring workbench.
//!
//! The crate bundles everything needed to study energy disaggregation on a
//! small testbed of identical motor loads:
//!
//! - [`sim`] - deterministic synthetic generator for aggregate and per-line
//!   electrical signals (three identical motors plus a lighting line).
//! - [`dataio`] - CSV dataset schema, cleaning, grid alignment and
//!   interval-based train/validation/test splits.
//! - [`baseline`] - event-based combinatorial disaggregator.
//! - [`net`] - multi-task sequence-to-sequence disaggregation network with
//!   dual-axis attention, trained with a built-in reverse-mode autodiff core.
//! - [`metrics`] - MAE / SAE / F1 / NDE reports and diagnostic breakdowns.
//! - [`rt`] - real-time replay/poll pipeline with an append-only prediction
//!   store and HTTP endpoints.

pub mod baseline;
pub mod chart;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod digest;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod rt;
pub mod sim;

pub use error::{Error, Result};
