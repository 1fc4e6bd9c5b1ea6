#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod diagnostics;
pub mod error;
pub mod federation;
pub mod learner;
pub mod linalg;
pub mod methods;
pub mod metrics;
pub mod params;
pub mod seed;
pub mod unrolled;

pub use error::{Error, Result};
