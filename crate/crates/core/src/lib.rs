//! Node classification on typed graphs with selective state space layers over metapath-aligned node sequences.
//!
//! The pipeline turns a typed graph into per-node subgraph tokens built from
//! metapath instances, aligns every token into one vector with two levels of
//! attention, orders nodes into sequences (per node type by instance count,
//! then globally by degree) and updates them with selective state-space
//! scans before a linear classification head.
//!
//! Runnable walkthroughs for each stage live in `examples/`.

pub mod alignment;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod hetgraph;
pub mod init;
pub mod model;
pub mod optim;
pub mod ordering;
pub mod report;
pub mod selftest;
pub mod ssm;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result, ValidationError};
