//! Embedding-based construction of image-sharing dialogue datasets.

pub mod analytics;
pub mod dialog_filter;
pub mod error;
pub mod eval;
pub mod io;
pub mod matcher;
pub mod pipeline;
pub mod source;
pub mod stats;
pub mod store;
pub mod synthetic;
pub mod text;

pub use error::{Error, Result};
