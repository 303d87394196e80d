//! Nonlinear optimal cooperative guidance for pursuers that must intercept a
//! stationary point with prescribed relative intercept angles.
//!
//! The crate is organized bottom-up:
//!
//! - [`engagement`]: kinematics, polar features, PN and unit conversions.
//! - [`pmp`]: Hamiltonian, costate dynamics and the extremal vector field.
//! - [`dataset`]: terminal-manifold sampling and backward propagation.
//! - [`mlp`]: the feedforward network that learns the feedback law.
//! - [`shooting`]: a single-shooting solver used as an optimality oracle.
//! - [`sim`]: closed-loop engagement simulation with a PN endgame.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod engagement;
pub mod error;
pub mod mlp;
pub mod ode;
pub mod pmp;
pub mod shooting;
pub mod sim;

pub use engagement::{CombinedState, EngagementConfig, FeatureMode, PolarFeatures, PursuerState, TargetState};
pub use error::{GuidanceError, Result};
pub use pmp::{Costate, ExtendedState, Trajectory};
