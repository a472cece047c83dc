//! Numerical library and experiment toolkit for long-tailed classification:
//! a gradient-rebalancing loss with mitigation and compensation factors,
//! normalized prediction heads, long-tail data synthesis and samplers, and a
//! small deterministic trainer with gradient-balance telemetry.
//!
//! The numeric modules are generic over the scalar type ([`Scalar`], f32 or
//! f64); the experiment pipeline runs in f64 via the [`Real`] alias.

pub mod data;
pub mod error;
pub mod heads;
pub mod loss;
pub mod numerics;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar precision used by the experiment pipeline.
pub type Real = f64;

/// Dense matrix in pipeline precision.
pub type RealMatrix = numerics::Matrix<Real>;

/// Classifier head in pipeline precision.
pub type RealLinearHead = heads::LinearHead<Real>;

/// Cumulative class counts in pipeline precision.
pub type RealClassCounts = loss::ClassCounts<Real>;

/// Loss hyperparameters in pipeline precision.
pub type RealSeesawConfig = loss::SeesawConfig<Real>;
