//! Semantic stability between time-sliced corpora, stability-aware vocabulary
//! selection for user-level text classifiers, and prevalence monitoring.

pub mod corpus;
mod error;
pub mod seed;

pub use error::{Error, Result};
pub mod cli;
pub mod config;
pub mod embed;
pub mod harness;
pub mod model;
pub mod monitor;
pub mod select;
pub mod shift;
pub mod synthlab;
