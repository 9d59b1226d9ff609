//! HAG-Net: graph classification with heterogeneous neighborhood
//! aggregation, built from scratch.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] — dense tensors and a reverse-mode autodiff tape
//! - [`graph`] — graph data model, JSON-lines datasets, batching, k-fold
//!   splits, synthetic tasks
//! - [`layers`] — permutation-invariant aggregation kernels, the
//!   heterogeneous aggregation layer and readout, GIN and GraphSAGE layers
//! - [`model`] — declarative model assembly (embedding, layer stack,
//!   pyramid readouts, classifier) and baselines
//! - [`metrics`] — error rate, AuROC, harmonic AuPR, median filtering and
//!   the convergence-variance statistic
//! - [`training`] — cross-entropy loss, SGD/Adam, epoch loop and k-fold
//!   protocol
//! - [`gradcheck`] — finite-difference gradient verification used across
//!   the test suites

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
