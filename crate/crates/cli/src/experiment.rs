//! Runs one experiment config: every seed, every artifact.

use std::fs;
use std::path::Path;

use anyhow::Context;
use poolopt::adaptation::{first_detection, warm_start};
use poolopt::baselines::{run_baseline, BaselineKind, BaselineSpec};
use poolopt::optimizer::MAX_GRID;
use poolopt::oracle::exhaustive_with;
use poolopt::simulator::simulate;
use poolopt::workload::{generate_stream, generate_with_rate_change, scale_load};
use poolopt::{
    true_optimum, BayesianOptimizer, Catalog, Evaluator, Landscape, ObjectiveContext, SearchResult, SimEvaluator,
    WorkloadSpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{LoadedConfig, SearchKind};

pub const SUMMARY_FILE: &str = "summary.json";
pub const META_FILE: &str = "meta.json";
pub const SCALE_EVENTS_FILE: &str = "scale_events.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    /// Hash of catalog, workload, QoS target and simulator options; runs are
    /// only comparable when it matches.
    pub fixture_id: String,
    pub search: SearchKind,
    pub budget: Option<usize>,
    pub t_qos: f64,
    pub runs: Vec<SeedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_config: String,
    pub best_cost: f64,
    pub best_r_sat: f64,
    pub best_objective: f64,
    pub samples_used: usize,
    /// Over every sample taken.
    pub exploration_cost: f64,
    /// The remaining fields need the oracle. Cost and violation counts cover
    /// the samples up to the first evaluation of the true optimum, or all
    /// samples when it was never reached.
    pub optimum_config: Option<String>,
    pub optimum_cost: Option<f64>,
    pub found_optimum: Option<bool>,
    /// `budget + 1` when the optimum was never sampled.
    pub samples_to_optimum: Option<usize>,
    pub exploration_cost_pct_of_exhaustive: Option<f64>,
    pub qos_violating_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEventRow {
    pub seed: u64,
    /// Trace time in seconds at which the monitor fired; empty when it never
    /// did.
    pub event_time: Option<f64>,
    pub old_lambda: f64,
    pub new_lambda: f64,
    pub transfer_set_size: usize,
    pub pruned_by_transfer: usize,
    /// Against the new-load oracle when available, else the warm run's own
    /// best.
    pub samples_to_new_optimum: Option<usize>,
}

/// What one seed produced: file name and contents, in write order.
struct SeedOutput {
    summary: SeedSummary,
    files: Vec<(String, Vec<u8>)>,
    scale: Option<ScaleEventRow>,
}

pub fn fixture_id(catalog: &Catalog, loaded: &LoadedConfig) -> anyhow::Result<String> {
    let canonical = serde_json::to_string(&(catalog, loaded.spec(), loaded.config.simulation))?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

fn landscape_for(
    catalog: &Catalog,
    spec: &WorkloadSpec,
    seed: u64,
    loaded: &LoadedConfig,
) -> anyhow::Result<Landscape> {
    let trace = generate_stream(spec, seed)?;
    Ok(exhaustive_with(
        catalog,
        &trace,
        &spec.qos,
        &loaded.config.simulation,
        MAX_GRID,
    )?)
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> poolopt::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

fn search<E: Evaluator + ?Sized>(
    kind: SearchKind,
    loaded: &LoadedConfig,
    ctx: &ObjectiveContext,
    evaluator: &mut E,
    seed: u64,
) -> anyhow::Result<SearchResult> {
    let budget = loaded.config.budget.context("budget missing")?;
    let opts = &loaded.config.optimizer;
    let baseline = |k| {
        let mut spec = BaselineSpec::new(k, budget, seed);
        spec.eval_duration_hours = opts.eval_duration_hours;
        spec
    };
    Ok(match kind {
        SearchKind::Bayesian => BayesianOptimizer::new(ctx.clone(), opts.clone()).run(evaluator, budget, seed)?,
        SearchKind::Random => run_baseline(&baseline(BaselineKind::Random), ctx, evaluator)?,
        SearchKind::HillClimb => run_baseline(&baseline(BaselineKind::HillClimb), ctx, evaluator)?,
        SearchKind::Rsm => run_baseline(&baseline(BaselineKind::Rsm), ctx, evaluator)?,
        SearchKind::Exhaustive => unreachable!("exhaustive runs do not search"),
    })
}

fn summarize(
    seed: u64,
    result: &SearchResult,
    landscape: Option<&Landscape>,
    t_qos: f64,
    budget: usize,
    eval_hours: f64,
) -> SeedSummary {
    let mut s = SeedSummary {
        seed,
        best_config: result.best.config.to_string(),
        best_cost: result.best.cost,
        best_r_sat: result.best.r_sat,
        best_objective: result.best.objective,
        samples_used: result.samples_used,
        exploration_cost: result.exploration_cost,
        optimum_config: None,
        optimum_cost: None,
        found_optimum: None,
        samples_to_optimum: None,
        exploration_cost_pct_of_exhaustive: None,
        qos_violating_samples: result.violations_in_first(result.samples_used, t_qos),
    };
    let Some(land) = landscape else {
        return s;
    };
    let Some(opt) = true_optimum(land, t_qos) else {
        s.exploration_cost_pct_of_exhaustive = Some(100.0 * result.exploration_cost / land.exhaustive_cost(eval_hours));
        return s;
    };
    let found = result.samples_to(&opt.config);
    let prefix = found.unwrap_or(result.samples_used);
    s.optimum_config = Some(opt.config.to_string());
    s.optimum_cost = Some(opt.cost);
    s.found_optimum = Some(found.is_some());
    s.samples_to_optimum = Some(found.unwrap_or(budget + 1));
    s.exploration_cost_pct_of_exhaustive =
        Some(100.0 * result.cost_of_first(prefix, eval_hours) / land.exhaustive_cost(eval_hours));
    s.qos_violating_samples = result.violations_in_first(prefix, t_qos);
    s
}

fn run_exhaustive_seed(catalog: &Catalog, loaded: &LoadedConfig, seed: u64) -> anyhow::Result<SeedOutput> {
    let spec = loaded.spec();
    let t_qos = spec.qos.satisfaction_quantile;
    let land = landscape_for(catalog, &spec, seed, loaded)?;
    let best = true_optimum(&land, t_qos)
        .or_else(|| land.argmax_objective())
        .context("empty landscape")?;
    let eval_hours = loaded.config.optimizer.eval_duration_hours;
    let total = land.exhaustive_cost(eval_hours);
    let feasible = true_optimum(&land, t_qos).is_some();
    let summary = SeedSummary {
        seed,
        best_config: best.config.to_string(),
        best_cost: best.cost,
        best_r_sat: best.r_sat,
        best_objective: best.objective,
        samples_used: land.len(),
        exploration_cost: total,
        optimum_config: feasible.then(|| best.config.to_string()),
        optimum_cost: feasible.then_some(best.cost),
        found_optimum: Some(feasible),
        samples_to_optimum: feasible.then_some(land.len()),
        exploration_cost_pct_of_exhaustive: Some(100.0),
        qos_violating_samples: land.records().filter(|r| r.r_sat < t_qos).count(),
    };
    let csv = csv_bytes(|b| land.write_csv(b))?;
    Ok(SeedOutput {
        summary,
        files: vec![(format!("landscape_seed{seed}.csv"), csv)],
        scale: None,
    })
}

fn run_seed(catalog: &Catalog, loaded: &LoadedConfig, seed: u64) -> anyhow::Result<SeedOutput> {
    let kind = loaded.config.search;
    if kind == SearchKind::Exhaustive {
        return run_exhaustive_seed(catalog, loaded, seed);
    }
    let spec = loaded.spec();
    let t_qos = spec.qos.satisfaction_quantile;
    let ctx = ObjectiveContext::from_catalog(catalog, t_qos)?;
    let budget = loaded.config.budget.context("budget missing")?;
    let eval_hours = loaded.config.optimizer.eval_duration_hours;
    let mut files = Vec::new();

    let landscape = if loaded.config.oracle {
        Some(landscape_for(catalog, &spec, seed, loaded)?)
    } else {
        None
    };
    // the landscape answers exactly what the simulator would, only faster
    let result = match &landscape {
        Some(land) => search(kind, loaded, &ctx, &mut land.evaluator(), seed)?,
        None => {
            let trace = generate_stream(&spec, seed)?;
            let mut ev = SimEvaluator::new(catalog, &trace, spec.qos, loaded.config.simulation);
            search(kind, loaded, &ctx, &mut ev, seed)?
        }
    };
    files.push((
        format!("convergence_seed{seed}.csv"),
        csv_bytes(|b| result.write_convergence_csv(b))?,
    ));
    if let Some(land) = &landscape {
        files.push((format!("landscape_seed{seed}.csv"), csv_bytes(|b| land.write_csv(b))?));
    }
    let summary = summarize(seed, &result, landscape.as_ref(), t_qos, budget, eval_hours);

    let scale = match loaded.config.scale_event {
        Some(ev) => Some(run_scale_event(catalog, loaded, &ctx, &result, seed, ev, &mut files)?),
        None => None,
    };
    Ok(SeedOutput { summary, files, scale })
}

/// Replays the old optimum through the load change, waits for the monitor
/// and, if the old optimum now misses the target, re-optimizes from a warm
/// start at the new load.
fn run_scale_event(
    catalog: &Catalog,
    loaded: &LoadedConfig,
    ctx: &ObjectiveContext,
    previous: &SearchResult,
    seed: u64,
    ev: crate::config::ScaleEvent,
    files: &mut Vec<(String, Vec<u8>)>,
) -> anyhow::Result<ScaleEventRow> {
    let spec = loaded.spec();
    let t_qos = ctx.t_qos();
    let sim = &loaded.config.simulation;
    let opts = &loaded.config.optimizer;
    let new_spec = scale_load(&spec, ev.factor)?;
    let mut row = ScaleEventRow {
        seed,
        event_time: None,
        old_lambda: spec.arrival_rate,
        new_lambda: new_spec.arrival_rate,
        transfer_set_size: 0,
        pruned_by_transfer: 0,
        samples_to_new_optimum: None,
    };

    let shifted = generate_with_rate_change(&spec, seed, ev.factor, ev.at_query_index)?;
    let replay = simulate(&previous.best.config, &shifted, catalog, &spec.qos, sim, true)?;
    let Some(at) = first_detection(ev.monitor.monitor(t_qos), &replay.queries)? else {
        return Ok(row);
    };
    row.event_time = Some(replay.queries[at].arrival_time_s);

    let new_land = if loaded.config.oracle {
        Some(landscape_for(catalog, &new_spec, seed, loaded)?)
    } else {
        None
    };
    let new_trace = generate_stream(&new_spec, seed)?;
    let mut sim_ev = SimEvaluator::new(catalog, &new_trace, new_spec.qos, *sim);
    let first = match &new_land {
        Some(land) => land.evaluator().evaluate(&previous.best.config)?,
        None => sim_ev.evaluate(&previous.best.config)?,
    };
    let Some(warm) = warm_start(previous, &first, ctx, opts.theta)? else {
        return Ok(row);
    };
    row.transfer_set_size = warm.transfer.len();
    row.pruned_by_transfer = poolopt::catalog::grid(ctx.upper_bounds())
        .filter(|c| warm.prune.contains(c))
        .count();
    let budget = loaded.config.budget.context("budget missing")?;
    let bo = BayesianOptimizer::new(ctx.clone(), opts.clone());
    let after = match &new_land {
        Some(land) => bo.run_warm(&mut land.evaluator(), budget, &warm)?,
        None => bo.run_warm(&mut sim_ev, budget, &warm)?,
    };
    row.samples_to_new_optimum = match &new_land {
        Some(land) => true_optimum(land, t_qos).map(|o| after.samples_to(&o.config).unwrap_or(budget + 1)),
        None => Some(after.samples_to_best()),
    };
    files.push((
        format!("convergence_seed{seed}_after_scale.csv"),
        csv_bytes(|b| after.write_convergence_csv(b))?,
    ));
    Ok(row)
}

fn write_scale_events(rows: &[ScaleEventRow]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seed",
        "event_time",
        "old_lambda",
        "new_lambda",
        "transfer_set_size",
        "pruned_by_transfer",
        "samples_to_new_optimum",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            opt(r.event_time.map(|v| v.to_string())),
            r.old_lambda.to_string(),
            r.new_lambda.to_string(),
            r.transfer_set_size.to_string(),
            r.pruned_by_transfer.to_string(),
            opt(r.samples_to_new_optimum.map(|v| v.to_string())),
        ])?;
    }
    Ok(w.into_inner()?)
}

fn write_meta(out: &Path, config_path: &Path) -> anyhow::Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "created_unix_s": now,
        "config": config_path.display().to_string(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    fs::write(out.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

/// Runs all seeds (concurrently) and writes the artifacts into `out`.
/// Everything except `meta.json` is a pure function of the config.
pub fn run_experiment(loaded: &LoadedConfig, config_path: &Path, out: &Path) -> anyhow::Result<Summary> {
    let catalog = loaded.catalog()?;
    let outputs = loaded
        .config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&catalog, loaded, seed).with_context(|| format!("seed {seed}")))
        .collect::<anyhow::Result<Vec<_>>>()?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut runs = Vec::with_capacity(outputs.len());
    let mut scale_rows = Vec::new();
    for o in outputs {
        for (name, bytes) in &o.files {
            fs::write(out.join(name), bytes).with_context(|| format!("writing {name}"))?;
        }
        runs.push(o.summary);
        scale_rows.extend(o.scale);
    }
    if loaded.config.scale_event.is_some() {
        fs::write(out.join(SCALE_EVENTS_FILE), write_scale_events(&scale_rows)?)?;
    }
    let summary = Summary {
        name: loaded.config.name.clone(),
        fixture_id: fixture_id(&catalog, loaded)?,
        search: loaded.config.search,
        budget: loaded.config.budget,
        t_qos: loaded.config.qos.satisfaction_quantile,
        runs,
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_vec_pretty(&summary)?)?;
    write_meta(out, config_path)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSeed {
    pub seed: u64,
    pub grid_size: usize,
    pub satisfying: usize,
    pub optimum_config: Option<String>,
    pub optimum_cost: Option<f64>,
    pub optimum_r_sat: Option<f64>,
    pub exhaustive_cost: f64,
}

/// Writes every seed's landscape plus `oracle.json` with the optima.
pub fn run_oracle(loaded: &LoadedConfig, config_path: &Path, out: &Path) -> anyhow::Result<Vec<OracleSeed>> {
    let catalog = loaded.catalog()?;
    let spec = loaded.spec();
    let t_qos = spec.qos.satisfaction_quantile;
    let eval_hours = loaded.config.optimizer.eval_duration_hours;
    let lands = loaded
        .config
        .seeds
        .par_iter()
        .map(|&seed| landscape_for(&catalog, &spec, seed, loaded).map(|l| (seed, l)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rows = Vec::new();
    for (seed, land) in &lands {
        fs::write(
            out.join(format!("landscape_seed{seed}.csv")),
            csv_bytes(|b| land.write_csv(b))?,
        )?;
        let opt = true_optimum(land, t_qos);
        rows.push(OracleSeed {
            seed: *seed,
            grid_size: land.len(),
            satisfying: land.records().filter(|r| r.r_sat >= t_qos).count(),
            optimum_config: opt.map(|o| o.config.to_string()),
            optimum_cost: opt.map(|o| o.cost),
            optimum_r_sat: opt.map(|o| o.r_sat),
            exhaustive_cost: land.exhaustive_cost(eval_hours),
        });
    }
    let doc = serde_json::json!({
        "name": loaded.config.name,
        "fixture_id": fixture_id(&catalog, loaded)?,
        "seeds": rows,
    });
    fs::write(out.join("oracle.json"), serde_json::to_vec_pretty(&doc)?)?;
    write_meta(out, config_path)?;
    Ok(rows)
}
