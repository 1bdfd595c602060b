//! Crash-reproduction planning by Monte Carlo tree search over a GUI interaction space.
//!
//! Two oracle roles steer the search: an expander proposes the top-k next actions for a
//! screen and a simulator scores each executed action against the bug report. Selection
//! samples children by softmax over UCB, scores are discretized into three levels before
//! backpropagation, and environment state is recovered by reset-and-replay.

mod ablation;
pub mod cli;
pub mod engine;
pub mod env;
pub mod oracle;
mod scalar;
pub mod tree;

pub use ablation::AblationFlags;
pub use scalar::Scalar;

/// Search tree with `f64` statistics.
pub type Tree = tree::SearchTree<f64>;
/// Search tree with `f32` statistics.
pub type Tree32 = tree::SearchTree<f32>;
/// Exact score arithmetic for checking level mapping and averaging.
pub type ExactScore = num_rational::Ratio<i64>;
