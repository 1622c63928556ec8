//! File formats, configuration and the command line around `unifront-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod error;
pub mod report;
pub mod tensor_io;

pub use error::{FormatError, Result};
