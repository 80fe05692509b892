pub mod cli;
pub mod cluster;
pub mod error;
pub mod eval;
pub mod expert;
pub mod features;
pub mod kid;
pub mod schema;
pub mod team;

pub use error::{Error, Result};
