pub mod bench;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod dispatch;
pub mod embedding;
pub mod error;
pub mod maintenance;
pub mod node;
pub mod optimizer;
pub mod payload;
pub mod pipeline;
pub mod scheduler;
pub mod simulator;
pub mod store;
pub mod workload;

pub use error::{Error, Result};
