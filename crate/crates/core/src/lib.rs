//! Quantify how much static versus dynamic information the intermediate
//! layers of a spatiotemporal network encode.
//!
//! The crate works on activations dumped by an external model harness:
//!
//! * [`sampling`] builds static, dynamic and identical input pairs from frame
//!   directories (temporal shuffling, optical-flow jitter, style swaps).
//! * [`tensorio`] defines the on-disk contract: the `SDT1` tensor container,
//!   the pair manifest, and the activation dump layout.
//! * [`metrics`] turns paired activations into per-unit correlations, a
//!   softmax allocation of units per layer, and a thresholded unit taxonomy.
//! * [`oracle`] plants units with known behaviour so the estimators can be
//!   checked without a trained network.
//! * [`report`] renders CSV/SVG summaries, center-bias maps and channel masks.
//!
//! Inner loops run on rayon when the `parallel` feature is enabled (default);
//! [`exec::Execution`] selects the path at runtime and the sequential path
//! gives bit-identical results.

pub mod error;
pub mod exec;
pub mod metrics;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod sampling;
pub mod tensorio;

pub use error::{Error, Result};
pub use exec::Execution;
pub use metrics::Factor;
pub use rng::{Seed, SplitMix64};
