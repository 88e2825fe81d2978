//! Zeroth-order stochastic optimization.
//!
//! ZO-AdaMM and six baselines driven by two-point gradient estimators,
//! Euclidean and diagonal-Mahalanobis projections, smoothing probes, test
//! problems and trace output.

pub mod config;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod numkit;
pub mod optimizers;
pub mod oracle;
pub mod problems;
pub mod smoothing;
pub mod validate;

pub use error::{Result, ZoError};
pub use estimators::{EstimatorConfig, EstimatorKind};
pub use geometry::{ConstraintSet, DiagonalMetric};
pub use metrics::{Envelope, RunResult, Trace, TraceRecord};
pub use numkit::{DenseVector, RngStream};
pub use optimizers::{Algorithm, OptConfig};
pub use oracle::{SampleSpace, StochasticObjective};
pub use problems::ProblemSpec;
