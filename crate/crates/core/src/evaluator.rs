//! The black box every searcher samples.

use crate::catalog::{Catalog, PoolConfig};
use crate::error::Result;
use crate::simulator::{simulate, EvaluationRecord, SimOptions};
use crate::workload::{QoSTarget, QueryTrace};

/// Measures one configuration. Searchers call this once per sample.
pub trait Evaluator {
    fn evaluate(&mut self, config: &PoolConfig) -> Result<EvaluationRecord>;
}

impl<F> Evaluator for F
where
    F: FnMut(&PoolConfig) -> Result<EvaluationRecord>,
{
    fn evaluate(&mut self, config: &PoolConfig) -> Result<EvaluationRecord> {
        self(config)
    }
}

/// Simulates every configuration on one shared trace (common random numbers).
#[derive(Debug, Clone)]
pub struct SimEvaluator<'a> {
    catalog: &'a Catalog,
    trace: &'a QueryTrace,
    qos: QoSTarget,
    opts: SimOptions,
    calls: usize,
}

impl<'a> SimEvaluator<'a> {
    pub fn new(catalog: &'a Catalog, trace: &'a QueryTrace, qos: QoSTarget, opts: SimOptions) -> Self {
        SimEvaluator {
            catalog,
            trace,
            qos,
            opts,
            calls: 0,
        }
    }

    /// Number of simulations run so far.
    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Evaluator for SimEvaluator<'_> {
    fn evaluate(&mut self, config: &PoolConfig) -> Result<EvaluationRecord> {
        self.calls += 1;
        simulate(config, self.trace, self.catalog, &self.qos, &self.opts, false).map(|s| s.record)
    }
}
