//! Preference goal tuning on a desk-scale gridworld.
//!
//! A frozen goal-conditioned policy is post-trained by optimizing only its
//! goal latent against a trajectory-level preference loss. The crate also
//! carries the baselines (behavior cloning, full and parameter-efficient
//! fine-tuning, continual-learning methods) and the ID/OOD evaluation
//! harness used to compare them.

// `!(x > 0.0)` is how NaN gets rejected alongside non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod continual;
pub mod env;
pub mod error;
pub mod eval;
pub mod numeric;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod tuning;

pub use error::{Error, Result};
