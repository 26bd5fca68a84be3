//! Diffusion-type distributed least squares over a sensor network.
//!
//! Nodes run a local recursive LS update and fuse neighbour estimates by covariance
//! intersection. The crate also carries the classical and centralized baselines, regret
//! and excitation diagnostics, numerical checks of the matrix inequalities the analysis
//! relies on, and an experiment harness.

pub mod analysis;
pub mod estimator;
pub mod graph;
pub mod harness;
pub mod model;
pub mod toolkit;
