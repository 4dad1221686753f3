//! Brute-force ground truth: every configuration of the grid evaluated on one
//! trace.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::catalog::{grid, grid_size, Catalog, PoolConfig};
use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::optimizer::MAX_GRID;
use crate::simulator::{simulate, EvaluationRecord, SimOptions};
use crate::workload::{QoSTarget, QueryTrace};

/// Every in-bounds configuration and its record, all on one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Landscape {
    entries: BTreeMap<PoolConfig, EvaluationRecord>,
    bounds: Vec<u32>,
    seed: u64,
}

impl Landscape {
    /// Assembles a landscape from records; they must cover `bounds` exactly.
    pub fn from_records(bounds: Vec<u32>, seed: u64, records: Vec<EvaluationRecord>) -> Result<Self> {
        let entries: BTreeMap<_, _> = records.into_iter().map(|r| (r.config.clone(), r)).collect();
        for c in grid(&bounds) {
            if !entries.contains_key(&c) {
                return Err(Error::MissingEntry(c.to_string()));
            }
        }
        if entries.len() as u128 != grid_size(&bounds) {
            return Err(Error::InvalidArgument("landscape has out-of-bounds entries".into()));
        }
        Ok(Landscape { entries, bounds, seed })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bounds(&self) -> &[u32] {
        &self.bounds
    }

    /// Seed of the shared trace.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, config: &PoolConfig) -> Option<&EvaluationRecord> {
        self.entries.get(config)
    }

    /// Records in lexicographic configuration order.
    pub fn records(&self) -> impl Iterator<Item = &EvaluationRecord> {
        self.entries.values()
    }

    /// What evaluating every configuration once costs, with the same
    /// per-evaluation duration the searchers are charged.
    pub fn exhaustive_cost(&self, eval_duration_hours: f64) -> f64 {
        self.entries.values().map(|r| r.cost).sum::<f64>() * eval_duration_hours
    }

    /// Highest objective; ties go to the lexicographically smallest config.
    pub fn argmax_objective(&self) -> Option<&EvaluationRecord> {
        self.entries
            .values()
            .fold(None, |acc: Option<&EvaluationRecord>, r| match acc {
                Some(b) if b.objective >= r.objective => Some(b),
                _ => Some(r),
            })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["config", "r_sat", "cost", "objective"])?;
        for r in self.entries.values() {
            w.write_record([
                r.config.to_string(),
                r.r_sat.to_string(),
                r.cost.to_string(),
                r.objective.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// An evaluator answering from this landscape.
    pub fn evaluator(&self) -> LandscapeEvaluator<'_> {
        LandscapeEvaluator {
            landscape: self,
            calls: 0,
        }
    }
}

/// Looks configurations up instead of simulating them. Equivalent to a
/// `SimEvaluator` on the landscape's trace, since simulation is
/// deterministic.
#[derive(Debug, Clone)]
pub struct LandscapeEvaluator<'a> {
    landscape: &'a Landscape,
    calls: usize,
}

impl LandscapeEvaluator<'_> {
    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Evaluator for LandscapeEvaluator<'_> {
    fn evaluate(&mut self, config: &PoolConfig) -> Result<EvaluationRecord> {
        self.calls += 1;
        self.landscape
            .get(config)
            .cloned()
            .ok_or_else(|| Error::MissingEntry(config.to_string()))
    }
}

/// Simulates every configuration of the catalog's grid on `trace`.
pub fn exhaustive(catalog: &Catalog, trace: &QueryTrace, qos: &QoSTarget) -> Result<Landscape> {
    exhaustive_with(catalog, trace, qos, &SimOptions::default(), MAX_GRID)
}

pub fn exhaustive_with(
    catalog: &Catalog,
    trace: &QueryTrace,
    qos: &QoSTarget,
    opts: &SimOptions,
    cap: u128,
) -> Result<Landscape> {
    let bounds = catalog.upper_bounds().to_vec();
    let size = grid_size(&bounds);
    if size > cap {
        return Err(Error::GridTooLarge { size, cap });
    }
    let configs: Vec<PoolConfig> = grid(&bounds).collect();
    let records = configs
        .par_iter()
        .map(|c| simulate(c, trace, catalog, qos, opts, false).map(|s| s.record))
        .collect::<Result<Vec<_>>>()?;
    Landscape::from_records(bounds, trace.seed(), records)
}

/// Cheapest configuration meeting `t_qos`; ties go to the lexicographically
/// smallest. `None` when nothing meets it.
pub fn true_optimum(landscape: &Landscape, t_qos: f64) -> Option<&EvaluationRecord> {
    landscape
        .records()
        .filter(|r| r.r_sat >= t_qos)
        .fold(None, |acc: Option<&EvaluationRecord>, r| match acc {
            Some(b) if b.cost <= r.cost => Some(b),
            _ => Some(r),
        })
}
