pub mod annotation;
pub mod config;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod io;
pub mod nn;
pub mod plot;
pub mod seed;

pub use error::{Error, Result};
