//! Toolkit for supercritical branching Brownian motion with compactly
//! supported branching and killing rates.
//!
//! The crate computes the principal eigenpair of the generator
//! `L = (1/2) Laplacian + (alpha - beta)`, solves the expected-density PDE,
//! evaluates the limiting moment functions of the normalized particle count
//! in a unit ball near the propagation front, and cross-checks everything
//! against an exact Monte Carlo particle simulation.
//!
//! Modules mirror the pipeline stages: [`model`] (configuration),
//! [`spectral`] (eigenpair, tail constants, ball factor), [`heatkernel`]
//! (density PDE), [`moments`] (limit and finite-time moments), [`mcsim`]
//! (particle simulation), [`pipeline`] (orchestration, comparison, output).

pub mod heatkernel;
pub mod mcsim;
pub mod model;
pub mod moments;
pub mod numerics;
pub mod pipeline;
pub mod spectral;

pub use model::{ExperimentConfig, FrontSchedule, GridSpec, PotentialSpec, ValidatedConfig};
pub use pipeline::{ComparisonReport, Pipeline, PipelineError};
