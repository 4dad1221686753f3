//! Cost-aware search for heterogeneous inference-serving pools.
//!
//! A pool is a vector of per-type instance counts. Each candidate pool is
//! scored by replaying one shared query trace through a discrete-event
//! simulator. A Bayesian optimizer with a rounded Matern kernel, expected
//! improvement and dominance pruning then looks for the cheapest pool that
//! meets a tail-latency target. Baseline searchers and an exhaustive oracle
//! are included for comparison.

pub mod adaptation;
pub mod baselines;
pub mod catalog;
pub mod design;
pub mod error;
pub mod evaluator;
pub mod gp;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod search;
pub mod simulator;
pub mod workload;

pub use catalog::{Catalog, CatalogFile, InstanceType, PoolConfig};
pub use error::{Error, Result};
pub use evaluator::{Evaluator, SimEvaluator};
pub use objective::{objective, ObjectiveContext};
pub use optimizer::{BayesianOptimizer, BoOptions};
pub use oracle::{exhaustive, true_optimum, Landscape};
pub use search::SearchResult;
pub use simulator::EvaluationRecord;
pub use workload::{QoSTarget, QueryTrace, WorkloadSpec};
