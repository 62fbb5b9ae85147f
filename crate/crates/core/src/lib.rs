//! Structured, robust LQR feedback for continuous-time LTI systems with an
//! unknown state matrix.
//!
//! The crate has a model-based side ([`synthesis`]) that solves the
//! structure-constrained, β-shifted Riccati equation by a modified Kleinman
//! iteration, and a data-driven side ([`learner`]) that recovers the same
//! iterates from state, input and exogenous-input measurements alone.
//! [`sim`] produces those measurements and [`bench`] wires everything into
//! reproducible experiments.

// `!(x > 0.0)` is the NaN-rejecting form used for config validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bound;
pub mod error;
pub mod learner;
pub mod linalg;
pub mod model;
pub mod sim;
pub mod synthesis;

pub use error::{Error, Result};
pub use model::{
    LearningTask, LqrWeights, LtiSystem, RobustnessParams, StructurePattern, SynthesisProblem,
};
