//! Discrete-event simulation of a pool serving a query trace.
//!
//! Queries wait in one global FIFO queue. When the query at the head of the
//! queue can start, it goes to the idle instance whose type comes first in
//! catalog order, lowest instance index first within a type. Because service
//! is FIFO, start times are non-decreasing in arrival order, so the
//! simulation is a single pass over the trace keeping one "free at" time per
//! instance.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{pool_cost, Catalog, InstanceType, PoolConfig};
use crate::error::{Error, Result};
use crate::objective::{objective, ObjectiveContext};
use crate::workload::{QoSTarget, QueryTrace};

/// Result of serving one trace with one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub config: PoolConfig,
    pub r_sat: f64,
    /// Hourly price of the pool.
    pub cost: f64,
    pub p99_latency_ms: f64,
    pub mean_latency_ms: f64,
    pub objective: f64,
    pub num_queries: usize,
    pub satisfied: usize,
    pub seed: u64,
}

impl EvaluationRecord {
    /// Record for a rate measured elsewhere; latency fields are zero.
    pub fn synthetic(config: PoolConfig, r_sat: f64, cost: f64, objective: f64) -> Self {
        EvaluationRecord {
            config,
            r_sat,
            cost,
            p99_latency_ms: 0.0,
            mean_latency_ms: 0.0,
            objective,
            num_queries: 0,
            satisfied: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Leading fraction of the trace excluded from statistics.
    pub warmup_fraction: f64,
    /// Seed for service-time noise; the trace seed when `None`.
    pub noise_seed: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            warmup_fraction: 0.0,
            noise_seed: None,
        }
    }
}

/// Per-query detail, kept only when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub arrival_time_s: f64,
    pub batch: u32,
    /// Index into the flattened instance list (catalog order).
    pub instance: usize,
    pub type_index: usize,
    pub wait_ms: f64,
    pub service_ms: f64,
    pub latency_ms: f64,
    pub satisfied: bool,
    /// Queries already waiting when this one arrived.
    pub queue_len_at_arrival: usize,
}

impl QueryOutcome {
    pub fn start_ms(&self) -> f64 {
        self.arrival_time_s * 1000.0 + self.wait_ms
    }

    pub fn finish_ms(&self) -> f64 {
        self.start_ms() + self.service_ms
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub record: EvaluationRecord,
    pub queries: Vec<QueryOutcome>,
}

impl Simulation {
    /// Writes the per-query CSV dump.
    pub fn write_queries_csv<W: Write>(&self, catalog: &Catalog, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "query_index",
            "arrival_time_s",
            "batch",
            "instance_type",
            "wait_ms",
            "service_ms",
            "latency_ms",
            "satisfied",
        ])?;
        for (i, q) in self.queries.iter().enumerate() {
            w.write_record([
                i.to_string(),
                q.arrival_time_s.to_string(),
                q.batch.to_string(),
                catalog.types()[q.type_index].name.clone(),
                q.wait_ms.to_string(),
                q.service_ms.to_string(),
                q.latency_ms.to_string(),
                q.satisfied.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Service time of one query on one instance: the interpolated profile value,
/// times a lognormal multiplier when the type is noisy.
pub fn service_time<R: Rng + ?Sized>(ty: &InstanceType, batch: u32, rng: &mut R) -> f64 {
    let base = ty.mean_service_ms(batch);
    let sigma = ty.service_noise.sigma();
    if sigma == 0.0 {
        return base;
    }
    let z: f64 = rng.sample(StandardNormal);
    base * (sigma * z).exp()
}

/// Nearest-rank percentile: element `ceil(p * N) - 1` of the sorted list.
pub fn percentile(latencies: &[f64], p: f64) -> Result<f64> {
    if latencies.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty list".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "percentile p must be in (0, 1), got {p}"
        )));
    }
    let mut v = latencies.to_vec();
    Ok(nearest_rank(&mut v, p))
}

fn nearest_rank(v: &mut [f64], p: f64) -> f64 {
    let rank = (p * v.len() as f64).ceil() as usize;
    let idx = rank.clamp(1, v.len()) - 1;
    *v.select_nth_unstable_by(idx, f64::total_cmp).1
}

/// Simulates `config` on `trace` with default options.
pub fn evaluate(
    config: &PoolConfig,
    trace: &QueryTrace,
    catalog: &Catalog,
    qos: &QoSTarget,
) -> Result<EvaluationRecord> {
    simulate(config, trace, catalog, qos, &SimOptions::default(), false).map(|s| s.record)
}

pub fn simulate(
    config: &PoolConfig,
    trace: &QueryTrace,
    catalog: &Catalog,
    qos: &QoSTarget,
    opts: &SimOptions,
    keep_queries: bool,
) -> Result<Simulation> {
    config.check_bounds(catalog.upper_bounds())?;
    if trace.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty trace".into()));
    }
    if !(0.0..1.0).contains(&opts.warmup_fraction) {
        return Err(Error::InvalidArgument(format!(
            "warmup fraction must be in [0, 1), got {}",
            opts.warmup_fraction
        )));
    }
    let ctx = ObjectiveContext::from_catalog(catalog, qos.satisfaction_quantile)?;
    let cost = pool_cost(config, catalog)?;
    let queries = trace.queries();
    let skip = (opts.warmup_fraction * queries.len() as f64).floor() as usize;
    let counted = queries.len() - skip;

    let instance_types: Vec<usize> = config
        .counts()
        .iter()
        .enumerate()
        .flat_map(|(t, &c)| std::iter::repeat_n(t, c as usize))
        .collect();

    if instance_types.is_empty() {
        let record = EvaluationRecord {
            config: config.clone(),
            r_sat: 0.0,
            cost,
            p99_latency_ms: f64::INFINITY,
            mean_latency_ms: f64::INFINITY,
            objective: objective(config, 0.0, &ctx)?,
            num_queries: counted,
            satisfied: 0,
            seed: trace.seed(),
        };
        return Ok(Simulation {
            record,
            queries: Vec::new(),
        });
    }

    let types = catalog.types();
    let noisy = instance_types.iter().any(|&t| types[t].service_noise.sigma() > 0.0);
    let mut rng = ChaCha12Rng::seed_from_u64(opts.noise_seed.unwrap_or(trace.seed()));

    let mut free_at = vec![0.0f64; instance_types.len()];
    let mut latencies = Vec::with_capacity(counted);
    let mut satisfied = 0usize;
    let mut latency_sum = 0.0;
    let mut details = Vec::with_capacity(if keep_queries { queries.len() } else { 0 });
    // start times so far, for queue length at arrival
    let mut starts: Vec<f64> = Vec::with_capacity(if keep_queries { queries.len() } else { 0 });
    let mut first_waiting = 0usize;

    for (k, q) in queries.iter().enumerate() {
        let arrival = q.arrival_time_s * 1000.0;
        // one normal draw per query keeps noise paired across configurations
        let z: f64 = if noisy { rng.sample(StandardNormal) } else { 0.0 };

        let earliest = free_at.iter().copied().fold(f64::INFINITY, f64::min);
        let start = arrival.max(earliest);
        let instance = free_at
            .iter()
            .position(|&f| f <= start)
            .expect("some instance is free at the start time");
        let ty = &types[instance_types[instance]];
        let sigma = ty.service_noise.sigma();
        let mut service = ty.mean_service_ms(q.batch_size);
        if sigma > 0.0 {
            service *= (sigma * z).exp();
        }
        free_at[instance] = start + service;
        let wait = start - arrival;
        let latency = wait + service;
        let ok = latency <= qos.latency_target_ms;

        if k >= skip {
            latencies.push(latency);
            latency_sum += latency;
            satisfied += usize::from(ok);
        }
        if keep_queries {
            while first_waiting < starts.len() && starts[first_waiting] <= arrival {
                first_waiting += 1;
            }
            details.push(QueryOutcome {
                arrival_time_s: q.arrival_time_s,
                batch: q.batch_size,
                instance,
                type_index: instance_types[instance],
                wait_ms: wait,
                service_ms: service,
                latency_ms: latency,
                satisfied: ok,
                queue_len_at_arrival: starts.len() - first_waiting,
            });
            starts.push(start);
        }
    }

    let r_sat = satisfied as f64 / counted as f64;
    let record = EvaluationRecord {
        config: config.clone(),
        r_sat,
        cost,
        p99_latency_ms: nearest_rank(&mut latencies, 0.99),
        mean_latency_ms: latency_sum / counted as f64,
        objective: objective(config, r_sat, &ctx)?,
        num_queries: counted,
        satisfied,
        seed: trace.seed(),
    };
    Ok(Simulation {
        record,
        queries: details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ServiceNoise;
    use crate::workload::Query;

    fn flat(name: &str, ms: f64) -> InstanceType {
        InstanceType::new(name, 1.0, vec![(1, ms)]).unwrap()
    }

    fn at(times: &[f64]) -> QueryTrace {
        QueryTrace::from_queries(
            times
                .iter()
                .map(|&t| Query {
                    arrival_time_s: t,
                    batch_size: 1,
                })
                .collect(),
            0,
        )
        .unwrap()
    }

    fn qos(ms: f64) -> QoSTarget {
        QoSTarget::new(ms, 0.99).unwrap()
    }

    #[test]
    fn two_queries_one_instance() {
        let catalog = Catalog::new(vec![flat("a", 10.0)], vec![1]).unwrap();
        let sim = simulate(
            &PoolConfig::new(vec![1]),
            &at(&[0.0, 0.0]),
            &catalog,
            &qos(15.0),
            &SimOptions::default(),
            true,
        )
        .unwrap();
        let lat: Vec<f64> = sim.queries.iter().map(|q| q.latency_ms).collect();
        assert_eq!(lat, vec![10.0, 20.0]);
        assert_eq!(sim.record.r_sat, 0.5);
        // the first query is already in service, not waiting
        assert_eq!(sim.queries[1].queue_len_at_arrival, 0);

        let three = simulate(
            &PoolConfig::new(vec![1]),
            &at(&[0.0, 0.0, 0.0]),
            &catalog,
            &qos(15.0),
            &SimOptions::default(),
            true,
        )
        .unwrap();
        let waiting: Vec<usize> = three.queries.iter().map(|q| q.queue_len_at_arrival).collect();
        assert_eq!(waiting, vec![0, 0, 1]);
    }

    #[test]
    fn spaced_queries_never_wait() {
        let catalog = Catalog::new(vec![flat("a", 10.0)], vec![1]).unwrap();
        let times: Vec<f64> = (0..20).map(f64::from).collect();
        let r = evaluate(&PoolConfig::new(vec![1]), &at(&times), &catalog, &qos(15.0)).unwrap();
        assert_eq!(r.r_sat, 1.0);
        assert_eq!(r.mean_latency_ms, 10.0);
    }

    #[test]
    fn dispatch_follows_type_order() {
        let catalog = Catalog::new(vec![flat("a", 10.0), flat("b", 5.0)], vec![1, 1]).unwrap();
        let sim = simulate(
            &PoolConfig::new(vec![1, 1]),
            &at(&[0.0]),
            &catalog,
            &qos(15.0),
            &SimOptions::default(),
            true,
        )
        .unwrap();
        assert_eq!(sim.queries[0].type_index, 0);
        assert_eq!(sim.queries[0].instance, 0);
    }

    #[test]
    fn saturated_queue_by_hand() {
        let catalog = Catalog::new(vec![flat("a", 10.0)], vec![1]).unwrap();
        let trace = at(&[0.0; 100]);
        let sim = simulate(
            &PoolConfig::new(vec![1]),
            &trace,
            &catalog,
            &qos(15.0),
            &SimOptions::default(),
            true,
        )
        .unwrap();
        for (k, q) in sim.queries.iter().enumerate() {
            assert_eq!(q.latency_ms, 10.0 * (k + 1) as f64);
        }
        assert_eq!(sim.record.r_sat, 0.01);
        assert_eq!(sim.record.satisfied, 1);
    }

    #[test]
    fn empty_pool() {
        let catalog = Catalog::new(vec![flat("a", 10.0)], vec![2]).unwrap();
        let r = evaluate(&PoolConfig::zeros(1), &at(&[0.0, 1.0]), &catalog, &qos(15.0)).unwrap();
        assert_eq!(r.r_sat, 0.0);
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let catalog = Catalog::new(vec![flat("a", 10.0)], vec![2]).unwrap();
        let trace = at(&[0.0]);
        assert!(matches!(
            evaluate(&PoolConfig::new(vec![1, 1]), &trace, &catalog, &qos(15.0)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            evaluate(&PoolConfig::new(vec![3]), &trace, &catalog, &qos(15.0)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn warmup_excludes_leading_queries() {
        let catalog = Catalog::new(vec![flat("a", 10.0)], vec![1]).unwrap();
        let opts = SimOptions {
            warmup_fraction: 0.5,
            ..SimOptions::default()
        };
        let sim = simulate(
            &PoolConfig::new(vec![1]),
            &at(&[0.0; 4]),
            &catalog,
            &qos(25.0),
            &opts,
            false,
        )
        .unwrap();
        // latencies 10, 20, 30, 40; only the last two count
        assert_eq!(sim.record.num_queries, 2);
        assert_eq!(sim.record.r_sat, 0.0);
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.99).unwrap(), 99.0);
        assert_eq!(percentile(&[7.0], 0.3).unwrap(), 7.0);
        assert_eq!(percentile(&[7.0], 0.999).unwrap(), 7.0);
        assert_eq!(percentile(&[10.0, 20.0], 0.5).unwrap(), 10.0);
        assert_eq!(percentile(&[20.0, 10.0], 0.51).unwrap(), 20.0);
        assert!(percentile(&[], 0.5).is_err());
        assert!(percentile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn service_time_examples() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let ty = InstanceType::new("t", 1.0, vec![(32, 10.0), (128, 30.0)]).unwrap();
        assert_eq!(service_time(&ty, 80, &mut rng), 20.0);
        assert_eq!(service_time(&ty, 256, &mut rng), 30.0);
        let zero = ty.clone().with_noise(ServiceNoise::Lognormal { sigma: 0.0 });
        assert_eq!(service_time(&zero, 80, &mut rng), 20.0);
        let noisy = ty.with_noise(ServiceNoise::Lognormal { sigma: 0.5 });
        let draws: Vec<f64> = (0..2000).map(|_| service_time(&noisy, 80, &mut rng)).collect();
        assert!(draws.iter().any(|&d| d != 20.0));
        let mut logs: Vec<f64> = draws.iter().map(|d| (d / 20.0).ln()).collect();
        let median = nearest_rank(&mut logs, 0.5);
        assert!(median.abs() < 0.05);
    }

    #[test]
    fn noisy_simulation_is_deterministic() {
        let ty = InstanceType::new("t", 1.0, vec![(1, 4.0), (64, 12.0)])
            .unwrap()
            .with_noise(ServiceNoise::Lognormal { sigma: 0.3 });
        let catalog = Catalog::new(vec![ty], vec![4]).unwrap();
        let spec = crate::workload::WorkloadSpec::new(300.0, qos(15.0));
        let trace = crate::workload::generate_stream(&spec, 4).unwrap();
        let a = evaluate(&PoolConfig::new(vec![2]), &trace, &catalog, &qos(15.0)).unwrap();
        let b = evaluate(&PoolConfig::new(vec![2]), &trace, &catalog, &qos(15.0)).unwrap();
        assert_eq!(a, b);
        let c = simulate(
            &PoolConfig::new(vec![2]),
            &trace,
            &catalog,
            &qos(15.0),
            &SimOptions {
                noise_seed: Some(99),
                ..SimOptions::default()
            },
            false,
        )
        .unwrap()
        .record;
        assert_ne!(a.r_sat, c.r_sat);
    }

    #[test]
    fn query_dump_columns() {
        let catalog = Catalog::new(vec![flat("a", 10.0)], vec![1]).unwrap();
        let sim = simulate(
            &PoolConfig::new(vec![1]),
            &at(&[0.0, 0.0]),
            &catalog,
            &qos(15.0),
            &SimOptions::default(),
            true,
        )
        .unwrap();
        let mut buf = Vec::new();
        sim.write_queries_csv(&catalog, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "query_index,arrival_time_s,batch,instance_type,wait_ms,service_ms,latency_ms,satisfied"
        );
        assert_eq!(lines.next().unwrap(), "0,0,1,a,0,10,10,true");
        assert_eq!(lines.next().unwrap(), "1,0,1,a,10,10,20,false");
    }
}
