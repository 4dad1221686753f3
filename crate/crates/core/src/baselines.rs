//! Competing searchers: random sampling with dominance skips, best-improvement
//! hill climbing with random restarts, and a response-surface design followed
//! by hill climbing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{grid, grid_size, PoolConfig};
use crate::design::face_centered_ccd;
use crate::error::{Error, Result};
use crate::evaluator::Evaluator;
use crate::objective::ObjectiveContext;
use crate::optimizer::MAX_GRID;
use crate::search::{better, SearchResult, Tracker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    HillClimb,
    Rsm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub budget: usize,
    pub seed: u64,
    /// Hill-climb starting point; the all-`m` corner when absent.
    #[serde(default)]
    pub start: Option<PoolConfig>,
    /// Wall time charged per evaluation, in hours.
    #[serde(default = "one_hour")]
    pub eval_duration_hours: f64,
}

fn one_hour() -> f64 {
    1.0
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind, budget: usize, seed: u64) -> Self {
        BaselineSpec {
            kind,
            budget,
            seed,
            start: None,
            eval_duration_hours: 1.0,
        }
    }

    fn validate(&self, ctx: &ObjectiveContext) -> Result<Vec<PoolConfig>> {
        if self.budget == 0 {
            return Err(Error::InvalidArgument("budget must be >= 1".into()));
        }
        let bounds = ctx.upper_bounds();
        if let Some(start) = &self.start {
            start.check_bounds(bounds)?;
        }
        let size = grid_size(bounds);
        if size > MAX_GRID {
            return Err(Error::GridTooLarge { size, cap: MAX_GRID });
        }
        Ok(grid(bounds).collect())
    }

    fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(4);
        rng
    }
}

/// Runs whichever searcher `spec.kind` names.
pub fn run_baseline<E: Evaluator + ?Sized>(
    spec: &BaselineSpec,
    ctx: &ObjectiveContext,
    evaluator: &mut E,
) -> Result<SearchResult> {
    match spec.kind {
        BaselineKind::Random => random_search(spec, ctx, evaluator),
        BaselineKind::HillClimb => hill_climb(spec, ctx, evaluator),
        BaselineKind::Rsm => rsm_search(spec, ctx, evaluator),
    }
}

fn finish(tracker: Tracker) -> Result<SearchResult> {
    tracker
        .finish(0)
        .ok_or_else(|| Error::InvalidArgument("search produced no samples".into()))
}

/// Uniform sampling without replacement. A candidate is skipped, free of
/// charge, when it is dominated by an observed violator or dominates an
/// observed satisfying configuration that costs no more.
pub fn random_search<E: Evaluator + ?Sized>(
    spec: &BaselineSpec,
    ctx: &ObjectiveContext,
    evaluator: &mut E,
) -> Result<SearchResult> {
    let mut order = spec.validate(ctx)?;
    order.shuffle(&mut spec.rng());
    let mut tracker = Tracker::new(spec.budget, spec.eval_duration_hours);
    let mut violators: Vec<PoolConfig> = Vec::new();
    let mut satisfiers: Vec<(PoolConfig, f64)> = Vec::new();
    for candidate in &order {
        if tracker.exhausted() {
            break;
        }
        if violators.iter().any(|v| candidate.dominated_by(v)) {
            continue;
        }
        let cost = ctx.cost(candidate)?;
        if satisfiers.iter().any(|(s, c)| s.dominated_by(candidate) && *c <= cost) {
            continue;
        }
        if let Some(r) = tracker.sample(evaluator, candidate, 0, None)? {
            if ctx.satisfies(r.r_sat) {
                satisfiers.push((r.config.clone(), r.cost));
            } else {
                violators.push(r.config.clone());
            }
        }
    }
    finish(tracker)
}

/// Best-improvement hill climbing over the ±1 neighborhood, scored by the
/// objective. At a local optimum it restarts at a uniformly random
/// unexplored configuration.
pub fn hill_climb<E: Evaluator + ?Sized>(
    spec: &BaselineSpec,
    ctx: &ObjectiveContext,
    evaluator: &mut E,
) -> Result<SearchResult> {
    let grid = spec.validate(ctx)?;
    let start = spec
        .start
        .clone()
        .unwrap_or_else(|| PoolConfig::new(ctx.upper_bounds().to_vec()));
    let mut tracker = Tracker::new(spec.budget, spec.eval_duration_hours);
    climb(
        &mut tracker,
        evaluator,
        ctx.upper_bounds(),
        &grid,
        start,
        &mut spec.rng(),
    )?;
    finish(tracker)
}

/// Evaluates the face-centered composite design, then hill-climbs from its
/// best point with whatever budget remains.
pub fn rsm_search<E: Evaluator + ?Sized>(
    spec: &BaselineSpec,
    ctx: &ObjectiveContext,
    evaluator: &mut E,
) -> Result<SearchResult> {
    let grid = spec.validate(ctx)?;
    if ctx.dims() < 2 {
        return Err(Error::InvalidArgument(
            "response-surface design needs >= 2 types".into(),
        ));
    }
    let mut tracker = Tracker::new(spec.budget, spec.eval_duration_hours);
    for point in face_centered_ccd(ctx.upper_bounds()) {
        tracker.sample(evaluator, &point, 0, None)?;
    }
    let start = tracker.best().map(|b| b.config.clone()).expect("budget >= 1");
    climb(
        &mut tracker,
        evaluator,
        ctx.upper_bounds(),
        &grid,
        start,
        &mut spec.rng(),
    )?;
    finish(tracker)
}

fn neighbors(x: &PoolConfig, bounds: &[u32]) -> Vec<PoolConfig> {
    let mut out = Vec::with_capacity(2 * x.len());
    for d in 0..x.len() {
        let v = x.counts()[d];
        if v > 0 {
            let mut c = x.counts().to_vec();
            c[d] = v - 1;
            out.push(PoolConfig::new(c));
        }
        if v < bounds[d] {
            let mut c = x.counts().to_vec();
            c[d] = v + 1;
            out.push(PoolConfig::new(c));
        }
    }
    out
}

fn climb<E: Evaluator + ?Sized, R: Rng>(
    tracker: &mut Tracker,
    evaluator: &mut E,
    bounds: &[u32],
    grid: &[PoolConfig],
    start: PoolConfig,
    rng: &mut R,
) -> Result<()> {
    let mut current = start;
    tracker.sample(evaluator, &current, 0, None)?;
    while !tracker.exhausted() {
        let around = neighbors(&current, bounds);
        for n in &around {
            tracker.sample(evaluator, n, 0, None)?;
        }
        let here = tracker.get(&current).expect("current is evaluated").clone();
        let step = around
            .iter()
            .filter_map(|n| tracker.get(n))
            .fold(None, |acc: Option<&_>, r| match acc {
                Some(b) if !better(r, b) => Some(b),
                _ => Some(r),
            })
            .filter(|r| r.objective > here.objective)
            .map(|r| r.config.clone());
        match step {
            Some(next) => current = next,
            None => {
                if tracker.exhausted() {
                    break;
                }
                let unexplored: Vec<&PoolConfig> = grid.iter().filter(|c| !tracker.seen(c)).collect();
                if unexplored.is_empty() {
                    break;
                }
                current = unexplored[rng.random_range(0..unexplored.len())].clone();
                tracker.sample(evaluator, &current, 0, None)?;
            }
        }
    }
    Ok(())
}
