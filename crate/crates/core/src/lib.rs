//! Testbench for Gaussian universality of regularized empirical risk
//! minimization over random-feature, neural-tangent and linear feature maps.

pub mod equiv;
pub mod error;
pub mod erm;
pub mod features;
pub mod free_energy;
pub mod harness;
pub mod matrix_io;
pub mod quadrature;
pub mod rng;
pub mod source;
pub mod suite;

pub use error::{Error, Result};
