pub mod bundle;
pub mod ensemble;
pub mod error;
pub mod gbdt;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod schema;
pub mod split;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};
