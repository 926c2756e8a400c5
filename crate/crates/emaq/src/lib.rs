//! Expected-max Q-learning, twice over.
//!
//! The exact half runs on finite MDPs: the expected-max backup is computed
//! in closed form via order statistics, its fixed point is solved by sweep
//! iteration, and the operator's contraction, monotonicity, interpolation,
//! and suboptimality guarantees become executable checks.
//!
//! The approximate half is a desk-scale training stack: an autoregressive
//! discretized behavior model, an ensemble of MLP Q-functions with EMA
//! targets, sample-max bootstrapped targets, test-time and exploration
//! policies, built-in environments, and offline dataset tooling.

pub mod behavior;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod exact;
pub mod neural;
pub mod policies;
pub mod rng;
pub mod tabular;
pub mod trainer;

pub use error::{EmaqError, Result};
