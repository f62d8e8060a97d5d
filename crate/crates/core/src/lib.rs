pub mod baselines;
pub mod bipartite;
pub mod channels;
pub mod crypto;
pub mod ensembles;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod measurement;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
