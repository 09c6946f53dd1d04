//! File formats and the `contrax` command-line tool built on
//! top of [`contrax_core`].

pub mod cli;
pub mod dataio;
pub mod error;
pub mod manifest;

pub use contrax_core as core;
pub use error::{IoError, Result};
