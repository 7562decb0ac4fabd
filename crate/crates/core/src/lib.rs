mod binio;
pub mod bm25;
pub mod error;
pub mod eval;
pub mod formats;
pub mod index;
pub mod objectives;
pub mod retrieval;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
