//! Hierarchical burnout-risk prediction from timestamped activity logs.

pub mod checkpoint;
pub mod config;
pub mod embed;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod hipal;
pub mod logstore;
pub mod nn;
pub mod seqae;
pub mod synthgen;

pub use error::{Error, Result};
