//! Symbolic regression engine for univariate time series.
//!
//! Expressions are prefix token paths over a small grammar. A guided tree
//! search proposes paths, a derivative-free optimizer fits their constant
//! slots to an observed window, and a reward balancing accuracy against
//! expression size drives both the search and the training of the
//! policy-value network that steers it. High-reward paths found along the
//! way are mined into an augmented symbol library that later searches can
//! sample from.

pub mod error;
pub mod expr;
pub mod library;
pub mod mcts;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod pvnet;

pub use error::{Error, Result};
