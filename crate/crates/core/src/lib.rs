pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluate;
pub mod inference;
pub mod model;
pub mod objectives;
pub mod pointer;
pub mod rouge;
#[cfg(test)]
mod testutil;
pub mod toy;
pub mod train;

pub use error::{DcaError, Result};
