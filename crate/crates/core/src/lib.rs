pub mod active_query;
pub mod cem;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod nets;
pub mod oracle;
pub mod pipeline;
pub mod scene;
pub mod seed;

pub use error::{Error, Result};
