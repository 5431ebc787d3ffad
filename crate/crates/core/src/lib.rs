//! Improper online multiclass logistic regression.
//!
//! The learner in [`regressor`] predicts with the mixed prediction of an
//! exponentially weighted posterior over linear predictors, which gives regret
//! logarithmic in the norm bound B instead of exponential. The remaining
//! modules build on it: bandit feedback ([`bandit`]), online boosting
//! ([`boosting`]), high-probability batch conversion ([`batch`]), proper
//! baselines ([`baselines`]) and stream generators including the margin
//! lower-bound adversary ([`adversary`]).

pub mod adversary;
pub mod bandit;
pub mod batch;
pub mod baselines;
pub mod boosting;
pub mod error;
pub mod learner;
pub mod losses;
pub mod regressor;
pub mod sampler;
pub mod stream;
pub mod weights;

pub use error::{Error, Result};
