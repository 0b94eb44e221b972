pub mod artifacts;
pub mod card;
pub mod error;
pub mod explain;
pub mod features;
pub mod gbdt;
pub mod ingest;
pub mod metrics;
pub mod split;
pub mod synth;

pub use error::{Error, Result};
