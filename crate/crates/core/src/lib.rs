pub mod config;
pub mod error;
pub mod ingest;
pub mod labelling;
pub mod metrics;
pub mod models;
mod numeric;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod session;
pub mod split;
pub mod synth;
pub mod tensorfile;

pub use error::{Error, Result};
