//! Numerical laboratory for degenerate Kolmogorov-chain SDEs.
//!
//! The chain `dX = F(t,X)dt + B σ(t,X) dW` lives in `R^{nd}` with noise entering
//! the first `d`-block only. The crate builds the frozen Gaussian proxy of the
//! chain, evaluates Green operators against it, runs coupled Monte-Carlo probes
//! and computes thermic Besov quasi-norms.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod besov_thermic;
pub mod chain_model;
pub mod cli;
pub mod error;
pub mod fit;
pub mod flow_resolvent;
pub mod gaussian_proxy;
pub mod green_estimator;
pub mod peano_lab;
pub mod quadrature;
pub mod sde_lab;
pub mod suite;

pub use chain_model::ChainSpec;
pub use error::{Error, Result};
pub use flow_resolvent::FreezingFrame;
pub use gaussian_proxy::GaussianProxy;
