//! Co-evolving skill extraction and skill-conditioned solving with a single
//! shared policy trained by group-relative policy optimization.

pub mod config;
pub mod env;
pub mod error;
pub mod grpo;
pub mod library;
pub mod metrics;
pub mod policy;
pub mod reliability;
pub mod retrieval;
pub mod scalar;
pub mod seed;
pub mod skill;
pub mod trainer;
pub mod vocab;

pub use config::{BaselineKind, RunConfig};
pub use error::{Error, Result};
pub use policy::Policy;

pub type Params = policy::Params<f64>;
pub type Snapshot = policy::Snapshot<f64>;
pub type AdamW = grpo::AdamW<f64>;
pub type LossReport = grpo::LossReport<f64>;
pub type Group = grpo::Group<f64>;
pub type Member = grpo::Member<f64>;
