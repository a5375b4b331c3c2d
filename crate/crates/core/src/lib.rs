//! Exact and learned diffusion models over ingredient masks and ingredient weights.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bitmask;
pub mod cli;
pub mod continuous;
pub mod discovery;
pub mod discrete;
pub mod error;
pub mod mask_model;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod synthetic;
pub mod training;
pub mod value_model;
pub mod vocab;

pub use bitmask::{hamming, BitMask};
pub use error::{Error, Result};
