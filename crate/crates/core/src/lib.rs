pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod feasible;
pub mod geometry;
pub mod models;
pub mod sim;
pub mod sysid;
pub mod trajectory;

pub use error::{Error, Result};
