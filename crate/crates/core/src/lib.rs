//! Differentiable point-to-plane rigid registration.
//!
//! The forward pass solves the linearized point-to-plane system repeatedly
//! and accumulates the small motions ([`solver`]). The backward pass
//! differentiates the solved transform with respect to every input through
//! the implicit function theorem on an orthogonality-penalized energy
//! ([`grad`]), and [`gradcheck`] verifies it against finite differences.

// Negated comparisons reject NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::needless_range_loop))]

pub mod cloud;
pub mod correspond;
pub mod error;
pub mod geom;
pub mod grad;
pub mod gradcheck;
pub mod kdtree;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod solver;

pub use cloud::{PointCloud, RegistrationPair, ShapeKind, SynthConfig};
pub use correspond::{CorrespondenceSet, ScoreMatrix};
pub use error::{Error, Result};
pub use geom::{AxisAngle, GVector, RigidTransform, RotationMatrix};
pub use grad::GradientBundle;
pub use solver::{LinearizedSystem, SolveReport};
