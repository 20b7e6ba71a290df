//! Kernel statistics for conditional goodness-of-fit and reliability of
//! sequence models.
//!
//! The crate computes the augmented conditional MMD (ACMMD) between a data
//! conditional `P(Y | X)` and a model conditional `Q(Y | X)` from triplets
//! `(x, y, ỹ)`, tests it with a wild bootstrap at exact level, and does the
//! same for the reliability variant that conditions on the model's own
//! predictive distribution. A synthetic two-letter sequence model with
//! closed-form population values is included for validation.

pub mod error;
pub mod estimator;
pub mod hypothesis;
pub mod kernels;
pub mod matrix;
mod parallel;
pub mod reliability;
pub mod rng;
pub mod sequence;
pub mod toy;

pub use error::{Error, Result};
pub use kernels::{Bandwidth, HammingMode, Item, ItemRef, KernelSpec};
pub use matrix::Matrix;
pub use sequence::{Alphabet, Sequence};
