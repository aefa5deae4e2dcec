//! Two-user Gaussian multiple-access channels with finite-alphabet inputs:
//! posterior estimation, mutual information and MMSE, closed-form gradients,
//! precoder and power optimization.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod config;
pub mod constellation;
pub mod error;
pub mod grad;
pub mod info;
pub mod integrate;
pub mod linalg;
pub mod opt;
pub mod quadrature;
pub mod system;

pub use bayes::{Evaluator, PosteriorStats};
pub use constellation::{product, Constellation, JointAlphabet};
pub use error::{Error, Result};
pub use integrate::McConfig;
pub use system::{MacSystem, User};
