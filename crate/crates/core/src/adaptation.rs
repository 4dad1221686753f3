//! Reacting to a load change: detect it from the query stream, then restart
//! the search warm from what the previous search learned.
//!
//! Configurations that did no better than the previous optimum under the old
//! load form the transfer set. Their new-load satisfaction rates are
//! estimated by scaling with the previous optimum's drop, which both prunes
//! configurations that will clearly violate and seeds the surrogate with
//! noisy pseudo-observations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::catalog::PoolConfig;
use crate::error::{Error, Result};
use crate::objective::{objective, ObjectiveContext};
use crate::optimizer::PruneSet;
use crate::search::SearchResult;
use crate::simulator::{EvaluationRecord, QueryOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadMonitor {
    /// Number of most recent queries inspected.
    pub window: usize,
    /// Queue growth across the window, in queries, that counts as backlog.
    pub queue_growth_threshold: f64,
    /// Drop of the windowed rate below `t_qos` that counts as degradation.
    pub qos_drop_threshold: f64,
    pub t_qos: f64,
}

impl LoadMonitor {
    pub fn new(t_qos: f64) -> Self {
        LoadMonitor {
            window: 500,
            queue_growth_threshold: 50.0,
            qos_drop_threshold: 0.05,
            t_qos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidArgument("monitor window must be >= 1".into()));
        }
        if !(self.queue_growth_threshold > 0.0) || !(self.qos_drop_threshold > 0.0) {
            return Err(Error::InvalidArgument("monitor thresholds must be > 0".into()));
        }
        Ok(())
    }

    /// Looks at the last `window` observations: the load changed iff the
    /// queue grew by more than the growth threshold across them and the
    /// fraction satisfied among them fell below `t_qos - qos_drop_threshold`.
    pub fn detect_load_change(&self, queue_sizes: &[usize], satisfied: &[bool]) -> Result<bool> {
        self.validate()?;
        let n = queue_sizes.len().min(satisfied.len());
        if n < self.window {
            return Err(Error::InvalidArgument(format!(
                "load monitor needs {} observations, got {n}",
                self.window
            )));
        }
        let q = &queue_sizes[queue_sizes.len() - self.window..];
        let s = &satisfied[satisfied.len() - self.window..];
        let growth = q[q.len() - 1] as f64 - q[0] as f64;
        let rate = s.iter().filter(|&&ok| ok).count() as f64 / self.window as f64;
        Ok(growth > self.queue_growth_threshold && rate < self.t_qos - self.qos_drop_threshold)
    }
}

/// Streaming form of [`LoadMonitor::detect_load_change`].
#[derive(Debug, Clone)]
pub struct RollingMonitor {
    monitor: LoadMonitor,
    queue: VecDeque<usize>,
    satisfied: VecDeque<bool>,
    hits: usize,
}

impl RollingMonitor {
    pub fn new(monitor: LoadMonitor) -> Result<Self> {
        monitor.validate()?;
        Ok(RollingMonitor {
            queue: VecDeque::with_capacity(monitor.window),
            satisfied: VecDeque::with_capacity(monitor.window),
            hits: 0,
            monitor,
        })
    }

    /// Feeds one completed query; true once the window is full and shows a
    /// load change.
    pub fn observe(&mut self, queue_len: usize, satisfied: bool) -> bool {
        if self.queue.len() == self.monitor.window {
            self.queue.pop_front();
            if self.satisfied.pop_front() == Some(true) {
                self.hits -= 1;
            }
        }
        self.queue.push_back(queue_len);
        self.satisfied.push_back(satisfied);
        if satisfied {
            self.hits += 1;
        }
        if self.queue.len() < self.monitor.window {
            return false;
        }
        let growth = *self.queue.back().unwrap() as f64 - *self.queue.front().unwrap() as f64;
        let rate = self.hits as f64 / self.monitor.window as f64;
        growth > self.monitor.queue_growth_threshold && rate < self.monitor.t_qos - self.monitor.qos_drop_threshold
    }
}

/// Index of the first query at which the monitor fires, in arrival order.
pub fn first_detection(monitor: LoadMonitor, outcomes: &[QueryOutcome]) -> Result<Option<usize>> {
    let mut rolling = RollingMonitor::new(monitor)?;
    Ok(outcomes
        .iter()
        .position(|o| rolling.observe(o.queue_len_at_arrival, o.satisfied)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSet {
    /// `(config, old-load r_sat)`, each no better than `anchor_old`.
    pub members: Vec<(PoolConfig, f64)>,
    /// The previous optimum's rate under the old load.
    pub anchor_old: f64,
    /// The previous optimum's rate under the new load.
    pub anchor_new: f64,
}

impl TransferSet {
    /// Every history entry whose old rate is at most `anchor_old`.
    pub fn from_history(history: &[EvaluationRecord], anchor_old: f64, anchor_new: f64) -> Self {
        TransferSet {
            members: history
                .iter()
                .filter(|r| r.r_sat <= anchor_old)
                .map(|r| (r.config.clone(), r.r_sat))
                .collect(),
            anchor_old,
            anchor_new,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// `old * anchor_new / anchor_old` per member, clamped to `[0, 1]`.
pub fn estimate_transfer_rates(s: &TransferSet) -> Result<Vec<(PoolConfig, f64)>> {
    if !(s.anchor_old > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "transfer anchor rate must be > 0, got {}",
            s.anchor_old
        )));
    }
    let scale = s.anchor_new / s.anchor_old;
    Ok(s.members
        .iter()
        .map(|(c, old)| (c.clone(), (old * scale).clamp(0.0, 1.0)))
        .collect())
}

/// An estimated, not measured, observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoObservation {
    pub config: PoolConfig,
    pub estimated_r_sat: f64,
    pub objective: f64,
}

/// Seed material for a warm-started search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    /// The previous optimum measured under the new load.
    pub first: EvaluationRecord,
    pub pseudo_observations: Vec<PseudoObservation>,
    pub prune: PruneSet,
    pub transfer: TransferSet,
}

/// Builds the warm start from a finished search and the new-load record of
/// its best configuration. `None` when that configuration still meets the
/// target or had a zero rate before, in which case the caller starts cold.
pub fn warm_start(
    previous: &SearchResult,
    new_load_record_of_old_best: &EvaluationRecord,
    ctx: &ObjectiveContext,
    theta: f64,
) -> Result<Option<WarmStart>> {
    let first = new_load_record_of_old_best;
    if first.config != previous.best.config {
        return Err(Error::InvalidArgument(format!(
            "new-load record is for {}, previous best is {}",
            first.config, previous.best.config
        )));
    }
    let anchor_old = previous.best.r_sat;
    if first.r_sat >= ctx.t_qos() || !(anchor_old > 0.0) {
        return Ok(None);
    }
    let transfer = TransferSet::from_history(&previous.history, anchor_old, first.r_sat);
    let mut prune = PruneSet::new(theta);
    let mut pseudo_observations = Vec::with_capacity(transfer.len());
    for (config, est) in estimate_transfer_rates(&transfer)? {
        if ctx.t_qos() - est > theta {
            prune.insert(config.clone());
        }
        pseudo_observations.push(PseudoObservation {
            objective: objective(&config, est, ctx)?,
            estimated_r_sat: est,
            config,
        });
    }
    Ok(Some(WarmStart {
        first: first.clone(),
        pseudo_observations,
        prune,
        transfer,
    }))
}
