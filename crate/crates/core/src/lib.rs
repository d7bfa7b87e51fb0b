#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod inference;
pub mod measurement;
pub mod noise;
pub mod physics;
pub mod reproduce;
pub mod run;
pub mod units;

pub use error::{Error, Result};
