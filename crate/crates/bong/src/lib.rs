//! Online variational Bayes for neural networks.
//!
//! Gaussian belief states (full-covariance, diagonal and diagonal-plus-low-rank
//! families), gradient / Hessian estimators of the expected log-likelihood,
//! the BONG, BLR, BOG and BBB update rules, exact reference oracles, a small
//! MLP predictor and a streaming evaluation harness.

// Validation uses `!(x > 0.0)` style checks on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod families;
pub mod harness;
pub mod linalg;
pub mod obs;
pub mod oracles;
pub mod predictor;
pub mod updaters;

pub use error::{BongError, Result};
pub use estimators::{estimate, EstimatorCfg, EstimatorKind, GradEstimate, HessianForm};
pub use families::{BeliefState, FamilyTag, GaussDLR, GaussDiag, GaussFC, Parameterization, Structure};
pub use obs::ObsModel;
pub use predictor::{Activation, MlpSpec};
pub use updaters::{run_stream, update, Algorithm, AlgorithmCfg, Dynamics, PsdPolicy};
