#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod campanato;
pub mod certify;
pub mod cli;
pub mod config;
pub mod excess;
pub mod measures;
pub mod numerics;
pub mod poisson;
pub mod synth;
pub mod tilt;
pub mod transport;

pub use error::{Error, Result};
