//! Numerical laboratory for expanding Ricci solitons on twisted nilpotent bundles
//! over surfaces.
//!
//! The pipeline has four stages:
//!
//! - a nilsoliton fibre from [`liealg`];
//! - a twisted harmonic map into the SPD symmetric space ([`spdgeom`] and [`harmonicflow`])
//!   on a discrete surface ([`surface`]);
//! - the conformal base equation ([`baseeq`]);
//! - block-wise certification of the soliton equation ([`assemble`]).

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assemble;
pub mod baseeq;
pub mod error;
pub mod harmonicflow;
pub mod io;
pub mod liealg;
pub mod spdgeom;
pub mod surface;

mod linalg;

pub use error::{Error, Result};
