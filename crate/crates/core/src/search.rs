//! Bookkeeping shared by every searcher: sampled history, incumbent, and the
//! convergence log.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::catalog::PoolConfig;
use crate::error::Result;
use crate::evaluator::Evaluator;
use crate::simulator::EvaluationRecord;

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// 1-based sample number.
    pub iteration: usize,
    pub config: PoolConfig,
    pub r_sat: f64,
    pub cost_per_hour: f64,
    pub objective: f64,
    pub best_objective_so_far: f64,
    pub pruned_total: usize,
    /// Largest acquisition value when this sample was chosen; only the
    /// Bayesian searcher has one.
    pub ei_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: EvaluationRecord,
    pub history: Vec<EvaluationRecord>,
    pub samples_used: usize,
    /// Sum over the history of hourly cost times the per-evaluation duration.
    pub exploration_cost: f64,
    /// Grid configurations inside the prune set when the search ended.
    pub pruned_count: usize,
    pub log: Vec<IterationLog>,
}

impl SearchResult {
    /// 1-based sample number at which `config` was first evaluated.
    pub fn samples_to(&self, config: &PoolConfig) -> Option<usize> {
        self.history.iter().position(|r| &r.config == config).map(|i| i + 1)
    }

    /// 1-based sample number at which the final best was evaluated.
    pub fn samples_to_best(&self) -> usize {
        self.samples_to(&self.best.config)
            .expect("best is always part of the history")
    }

    /// Exploration cost of the first `n` samples.
    pub fn cost_of_first(&self, n: usize, eval_duration_hours: f64) -> f64 {
        self.history.iter().take(n).map(|r| r.cost).sum::<f64>() * eval_duration_hours
    }

    /// Number of QoS-violating configurations among the first `n` samples.
    pub fn violations_in_first(&self, n: usize, t_qos: f64) -> usize {
        self.history.iter().take(n).filter(|r| r.r_sat < t_qos).count()
    }

    /// Writes the convergence trace CSV.
    pub fn write_convergence_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration",
            "config",
            "r_sat",
            "cost_per_hour",
            "objective",
            "best_objective_so_far",
            "pruned_total",
            "ei_max",
        ])?;
        for row in &self.log {
            w.write_record([
                row.iteration.to_string(),
                row.config.to_string(),
                row.r_sat.to_string(),
                row.cost_per_hour.to_string(),
                row.objective.to_string(),
                row.best_objective_so_far.to_string(),
                row.pruned_total.to_string(),
                row.ei_max.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `a` beats `b`: higher objective, then lower cost, then the
/// lexicographically smaller configuration.
pub fn better(a: &EvaluationRecord, b: &EvaluationRecord) -> bool {
    if a.objective != b.objective {
        return a.objective > b.objective;
    }
    if a.cost != b.cost {
        return a.cost < b.cost;
    }
    a.config < b.config
}

/// Sampled history with budget accounting. Never evaluates a configuration
/// twice.
#[derive(Debug)]
pub(crate) struct Tracker {
    pub history: Vec<EvaluationRecord>,
    pub log: Vec<IterationLog>,
    index: HashMap<PoolConfig, usize>,
    best: Option<usize>,
    budget: usize,
    eval_duration_hours: f64,
}

impl Tracker {
    pub fn new(budget: usize, eval_duration_hours: f64) -> Self {
        Tracker {
            history: Vec::new(),
            log: Vec::new(),
            index: HashMap::new(),
            best: None,
            budget,
            eval_duration_hours,
        }
    }

    pub fn exhausted(&self) -> bool {
        self.history.len() >= self.budget
    }

    pub fn seen(&self, config: &PoolConfig) -> bool {
        self.index.contains_key(config)
    }

    pub fn get(&self, config: &PoolConfig) -> Option<&EvaluationRecord> {
        self.index.get(config).map(|&i| &self.history[i])
    }

    pub fn best(&self) -> Option<&EvaluationRecord> {
        self.best.map(|i| &self.history[i])
    }

    /// Adds an already-measured record, e.g. one carried over from
    /// elsewhere. Returns `false` if the configuration was already present.
    pub fn push(&mut self, record: EvaluationRecord, pruned_total: usize, ei_max: Option<f64>) -> bool {
        if self.seen(&record.config) {
            return false;
        }
        let i = self.history.len();
        self.index.insert(record.config.clone(), i);
        if self.best().is_none_or(|b| better(&record, b)) {
            self.best = Some(i);
        }
        let best_objective_so_far = match self.best {
            Some(b) if b < i => self.history[b].objective,
            _ => record.objective,
        };
        self.log.push(IterationLog {
            iteration: i + 1,
            config: record.config.clone(),
            r_sat: record.r_sat,
            cost_per_hour: record.cost,
            objective: record.objective,
            best_objective_so_far,
            pruned_total,
            ei_max,
        });
        self.history.push(record);
        true
    }

    /// Evaluates `config` unless it was seen already or the budget is spent.
    pub fn sample<E: Evaluator + ?Sized>(
        &mut self,
        evaluator: &mut E,
        config: &PoolConfig,
        pruned_total: usize,
        ei_max: Option<f64>,
    ) -> Result<Option<&EvaluationRecord>> {
        if self.exhausted() || self.seen(config) {
            return Ok(None);
        }
        let record = evaluator.evaluate(config)?;
        self.push(record, pruned_total, ei_max);
        Ok(self.history.last())
    }

    /// Patches the pruned count of the latest log row.
    pub fn set_last_pruned(&mut self, pruned_total: usize) {
        if let Some(row) = self.log.last_mut() {
            row.pruned_total = pruned_total;
        }
    }

    pub fn finish(self, pruned_count: usize) -> Option<SearchResult> {
        let best = self.best()?.clone();
        let exploration_cost = self.history.iter().map(|r| r.cost).sum::<f64>() * self.eval_duration_hours;
        Some(SearchResult {
            best,
            samples_used: self.history.len(),
            history: self.history,
            exploration_cost,
            pruned_count,
            log: self.log,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: &[u32], obj: f64, cost: f64) -> EvaluationRecord {
        EvaluationRecord::synthetic(PoolConfig::new(c.to_vec()), 1.0, cost, obj)
    }

    #[test]
    fn best_tie_breaks() {
        assert!(better(&rec(&[1], 0.7, 2.0), &rec(&[0], 0.6, 1.0)));
        assert!(better(&rec(&[1], 0.6, 1.0), &rec(&[0], 0.6, 2.0)));
        assert!(better(&rec(&[0, 2], 0.6, 1.0), &rec(&[1, 0], 0.6, 1.0)));
    }

    #[test]
    fn tracker_dedups_and_respects_budget() {
        let mut t = Tracker::new(2, 1.0);
        let mut calls = 0;
        let mut eval = |c: &PoolConfig| {
            calls += 1;
            Ok(rec(c.counts(), 0.1 * f64::from(c.counts()[0]), 1.0))
        };
        assert!(t
            .sample(&mut eval, &PoolConfig::new(vec![1]), 0, None)
            .unwrap()
            .is_some());
        assert!(t
            .sample(&mut eval, &PoolConfig::new(vec![1]), 0, None)
            .unwrap()
            .is_none());
        assert!(t
            .sample(&mut eval, &PoolConfig::new(vec![3]), 0, None)
            .unwrap()
            .is_some());
        assert!(t
            .sample(&mut eval, &PoolConfig::new(vec![4]), 0, None)
            .unwrap()
            .is_none());
        assert_eq!(calls, 2);
        let r = t.finish(0).unwrap();
        assert_eq!(r.samples_used, 2);
        assert_eq!(r.best.config, PoolConfig::new(vec![3]));
        assert_eq!(r.samples_to_best(), 2);
        assert_eq!(r.exploration_cost, 2.0);
        let mut buf = Vec::new();
        r.write_convergence_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .starts_with("iteration,config,r_sat,cost_per_hour,objective,best_objective_so_far,pruned_total,ei_max\n"));
        assert!(text.lines().nth(2).unwrap().ends_with(",0,"));
    }
}
