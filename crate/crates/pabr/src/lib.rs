//! File formats, manifests, PCA visualization and the command-line front end
//! for [`pabr_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod format;
pub mod manifest;
pub mod textio;
pub mod viz;

pub use error::{Error, Result};
