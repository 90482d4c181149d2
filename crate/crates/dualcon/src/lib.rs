//! Data loading, file formats, checkpoints and the command line for
//! [`dualcon_core`].

pub mod checkpoint;
pub mod cifar;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod pipeline;

pub use dualcon_core;
pub use error::{Error, Result};
