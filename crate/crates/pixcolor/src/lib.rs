//! Dataset ingestion, training loops, checkpoints, evaluation reports and
//! the `pixcolor` command line, built on `pixcolor-core`.

pub mod checkpoint;
pub mod cli;
pub mod colorize;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod io;
pub mod train;

pub use error::{Error, Result};
pub use pixcolor_core as core;
