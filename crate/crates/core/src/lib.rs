pub mod desom;
pub mod error;
pub mod eval;
pub mod formats;
pub mod nn;
pub mod som;
pub mod stamps;
pub mod stats;
pub mod synth;

pub use error::{Error, ParseError, Result};
