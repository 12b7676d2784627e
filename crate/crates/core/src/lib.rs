//! Sample-efficient optimization of constrained black-box problems with an
//! actor-critic pair of neural networks.
//!
//! The crate is organized around the optimization loop in [`optimizer`]:
//! a critic network learns to predict spec vectors from pairs of evaluated
//! designs ([`critic`]), an actor network proposes design changes that the
//! critic scores well while staying inside the box spanned by the elite
//! designs ([`actor`]), and the best proposal is sent to the real evaluator
//! ([`evaluators`]). [`baselines`] and [`sensitivity`] round out the
//! comparison and variable-screening workflows.

pub mod error;
pub mod nn;
pub mod optimizer;
pub mod actor;
pub mod baselines;
pub mod critic;
pub mod evaluators;
pub mod problem;
pub mod sensitivity;
pub mod cli;

pub use error::{Error, Result};
