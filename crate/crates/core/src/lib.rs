//! Continual learning of compositional cognitive tasks with two cooperating
//! learners.
//!
//! * [`taskgen`] generates trials from a hidden-Markov description of a family
//!   of delayed-response, memory-guided and decision-making tasks.
//! * [`taskmodel`] learns that description online, one trial at a time, with
//!   incremental EM, and infers the time-varying epoch ("context") of a trial.
//! * [`contextrnn`] is a recurrent network whose low-rank components are mixed
//!   according to the inferred context and trained with backprop-through-time.
//! * [`baselines`] holds the full-rank comparison learners (Adam, EWC, OWP).
//! * [`harness`] wires everything into the continual-learning, transfer and
//!   compositional-generalization experiments and renders their plots.

pub mod baselines;
pub mod checkpoint;
pub mod contextrnn;
mod error;
pub mod gating;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod taskgen;
pub mod taskmodel;

pub use error::{Error, Result};
pub use gating::Gating;

/// Dimension of the input sequence `s_t`.
pub const INPUT_DIM: usize = 5;
/// Dimension of the target sequence `y_t`.
pub const OUTPUT_DIM: usize = 3;
/// Dimension of an observation `q_t = [s_t, y_t]`.
pub const OBS_DIM: usize = INPUT_DIM + OUTPUT_DIM;
