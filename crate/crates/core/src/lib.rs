//! Pre-release privacy issue prediction.
//!
//! Learns which privacy complaints past features attracted, simulates
//! reviews for features that have not shipped yet, and summarises them into
//! short privacy issues. A post-release baseline and the comparison metrics
//! used to judge the two live alongside.

pub mod classifier;
pub mod corpus;
pub mod embedding;
pub mod mapper;
pub mod pipeline;
pub mod simulator;
pub mod error;
pub mod eval;
pub mod issues;
pub mod registry;
pub mod runner;
pub mod text;

pub use error::{Error, Result};
