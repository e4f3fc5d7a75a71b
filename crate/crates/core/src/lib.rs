pub mod error;
pub mod flm;
pub mod infer;
pub mod metrics;
pub mod morphology;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synthgen;
pub mod volume;

pub use error::{Error, JobId, Result};
