//! Operator scaling stable random fields.
//!
//! Polar coordinates with respect to a scaling matrix E, LePage-series
//! simulation of harmonizable and moving-average stable fields, exact
//! Gaussian simulation, and estimators for regularity and dimension.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod field;
pub mod gaussian_sim;
pub mod homogeneous;
pub mod lepage_sim;
pub mod linalg;
pub mod moving_average;
pub mod operator_algebra;
pub mod polar;
pub mod quadrature;
pub mod regularity_lab;
pub mod rng;
pub mod spectral;
pub mod stable_core;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use operator_algebra::{
    jordan_norm_bounds_check, mat_power, BlockKind, BlockStructure, JordanBlock, OperatorMatrix,
};
