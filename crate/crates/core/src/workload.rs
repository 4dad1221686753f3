//! Reproducible query streams: Poisson arrivals with random batch sizes.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tail-latency QoS: at least `satisfaction_quantile` of the queries must
/// finish within `latency_target_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoSTarget {
    pub latency_target_ms: f64,
    #[serde(default = "default_quantile")]
    pub satisfaction_quantile: f64,
}

fn default_quantile() -> f64 {
    0.99
}

impl QoSTarget {
    pub fn new(latency_target_ms: f64, satisfaction_quantile: f64) -> Result<Self> {
        let qos = QoSTarget {
            latency_target_ms,
            satisfaction_quantile,
        };
        qos.validate()?;
        Ok(qos)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latency_target_ms > 0.0) || !self.latency_target_ms.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "qos.latency_target_ms must be > 0, got {}",
                self.latency_target_ms
            )));
        }
        if !(self.satisfaction_quantile > 0.0 && self.satisfaction_quantile < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "qos.satisfaction_quantile must be in (0, 1), got {}",
                self.satisfaction_quantile
            )));
        }
        Ok(())
    }
}

/// Batch-size distribution, before rounding and clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BatchDist {
    /// `mu` and `sigma` are the mean and std of the underlying normal.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Gaussian {
        mean: f64,
        std: f64,
    },
}

impl Default for BatchDist {
    fn default() -> Self {
        BatchDist::Lognormal {
            mu: 16f64.ln(),
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    /// Mean arrival rate in queries per second.
    pub arrival_rate: f64,
    #[serde(default)]
    pub batch_dist: BatchDist,
    #[serde(default = "default_batch_min")]
    pub batch_min: u32,
    #[serde(default = "default_batch_max")]
    pub batch_max: u32,
    #[serde(default = "default_num_queries")]
    pub num_queries: usize,
    pub qos: QoSTarget,
}

fn default_batch_min() -> u32 {
    1
}
fn default_batch_max() -> u32 {
    256
}
fn default_num_queries() -> usize {
    10_000
}

impl WorkloadSpec {
    /// Defaults for everything but the arrival rate and QoS target.
    pub fn new(arrival_rate: f64, qos: QoSTarget) -> Self {
        WorkloadSpec {
            arrival_rate,
            batch_dist: BatchDist::default(),
            batch_min: default_batch_min(),
            batch_max: default_batch_max(),
            num_queries: default_num_queries(),
            qos,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.arrival_rate > 0.0) || !self.arrival_rate.is_finite() {
            return bad(format!("workload.arrival_rate must be > 0, got {}", self.arrival_rate));
        }
        if self.batch_min == 0 || self.batch_min > self.batch_max {
            return bad(format!(
                "workload batch range [{}, {}] is invalid",
                self.batch_min, self.batch_max
            ));
        }
        if self.num_queries == 0 {
            return bad("workload.num_queries must be >= 1".into());
        }
        match self.batch_dist {
            BatchDist::Lognormal { mu, sigma } if !mu.is_finite() || !(sigma >= 0.0) => {
                return bad("workload.batch_dist lognormal needs finite mu and sigma >= 0".into())
            }
            BatchDist::Gaussian { mean, std } if !mean.is_finite() || !(std >= 0.0) => {
                return bad("workload.batch_dist gaussian needs finite mean and std >= 0".into())
            }
            _ => {}
        }
        self.qos.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub arrival_time_s: f64,
    pub batch_size: u32,
}

/// A realized query stream. Arrival times are non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTrace {
    queries: Vec<Query>,
    seed: u64,
}

impl QueryTrace {
    /// Builds a trace from explicit queries; fails if arrivals go backwards
    /// or a batch size is zero.
    pub fn from_queries(queries: Vec<Query>, seed: u64) -> Result<Self> {
        if queries.windows(2).any(|w| w[1].arrival_time_s < w[0].arrival_time_s) {
            return Err(Error::InvalidArgument(
                "trace arrival times must be non-decreasing".into(),
            ));
        }
        if queries
            .iter()
            .any(|q| q.batch_size == 0 || !q.arrival_time_s.is_finite() || q.arrival_time_s < 0.0)
        {
            return Err(Error::InvalidArgument(
                "trace queries need batch >= 1 and finite non-negative arrivals".into(),
            ));
        }
        Ok(QueryTrace { queries, seed })
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.queries.last().map_or(0.0, |q| q.arrival_time_s)
    }

    /// Writes `arrival_time_s,batch_size` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["arrival_time_s", "batch_size"])?;
        for q in &self.queries {
            w.write_record([q.arrival_time_s.to_string(), q.batch_size.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

// Separate streams keep batch sizes identical when only the arrival rate
// changes, so scaled traces stay paired with the original.
const ARRIVAL_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;

fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_batches(spec: &WorkloadSpec, seed: u64, n: usize) -> Vec<u32> {
    let mut rng = stream_rng(seed, BATCH_STREAM);
    let (lo, hi) = (f64::from(spec.batch_min), f64::from(spec.batch_max));
    let clamp = |x: f64| x.round().clamp(lo, hi) as u32;
    match spec.batch_dist {
        BatchDist::Lognormal { mu, sigma } => {
            let dist = LogNormal::new(mu, sigma).expect("validated lognormal parameters");
            (0..n).map(|_| clamp(dist.sample(&mut rng))).collect()
        }
        BatchDist::Gaussian { mean, std } => {
            let dist = Normal::new(mean, std).expect("validated gaussian parameters");
            (0..n).map(|_| clamp(dist.sample(&mut rng))).collect()
        }
    }
}

/// Generates `spec.num_queries` queries with exponential inter-arrival
/// times of rate `spec.arrival_rate`; batch sizes are drawn from
/// `spec.batch_dist`, rounded to the nearest integer and clamped to
/// `[batch_min, batch_max]`. Identical `(spec, seed)` gives identical traces.
pub fn generate_stream(spec: &WorkloadSpec, seed: u64) -> Result<QueryTrace> {
    generate_with_rate_change(spec, seed, 1.0, spec.num_queries)
}

/// Like [`generate_stream`], but the arrival rate is multiplied by `factor`
/// from query index `at_index` onward.
pub fn generate_with_rate_change(spec: &WorkloadSpec, seed: u64, factor: f64, at_index: usize) -> Result<QueryTrace> {
    spec.validate()?;
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be > 0, got {factor}"
        )));
    }
    let n = spec.num_queries;
    let batches = draw_batches(spec, seed, n);
    let mut rng = stream_rng(seed, ARRIVAL_STREAM);
    // unit-rate draws scaled per query, so both rates share one stream
    let unit = Exp::new(1.0).expect("unit rate");
    let mut t = 0.0;
    let queries = batches
        .into_iter()
        .enumerate()
        .map(|(i, batch_size)| {
            let rate = if i >= at_index {
                spec.arrival_rate * factor
            } else {
                spec.arrival_rate
            };
            let gap: f64 = unit.sample(&mut rng);
            t += gap / rate;
            Query {
                arrival_time_s: t,
                batch_size,
            }
        })
        .collect();
    Ok(QueryTrace { queries, seed })
}

/// Returns a copy of `spec` with the arrival rate multiplied by `factor`.
pub fn scale_load(spec: &WorkloadSpec, factor: f64) -> Result<WorkloadSpec> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be > 0, got {factor}"
        )));
    }
    Ok(WorkloadSpec {
        arrival_rate: spec.arrival_rate * factor,
        ..spec.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(rate: f64) -> WorkloadSpec {
        WorkloadSpec::new(rate, QoSTarget::new(20.0, 0.99).unwrap())
    }

    #[test]
    fn same_seed_same_trace() {
        let s = spec(100.0);
        assert_eq!(generate_stream(&s, 7).unwrap(), generate_stream(&s, 7).unwrap());
        assert_ne!(generate_stream(&s, 7).unwrap(), generate_stream(&s, 8).unwrap());
    }

    #[test]
    fn mean_interarrival_matches_rate() {
        let trace = generate_stream(&spec(100.0), 3).unwrap();
        assert_eq!(trace.len(), 10_000);
        let mean_gap_ms = 1000.0 * trace.duration_s() / trace.len() as f64;
        assert!((mean_gap_ms - 10.0).abs() < 0.5, "mean gap {mean_gap_ms} ms");
    }

    #[test]
    fn degenerate_lognormal_is_constant() {
        let mut s = spec(50.0);
        s.batch_dist = BatchDist::Lognormal {
            mu: 8f64.ln(),
            sigma: 0.0,
        };
        let trace = generate_stream(&s, 1).unwrap();
        assert!(trace.queries().iter().all(|q| q.batch_size == 8));
    }

    #[test]
    fn lognormal_median_near_exp_mu() {
        let mut s = spec(100.0);
        s.num_queries = 20_000;
        s.batch_max = 100_000;
        let trace = generate_stream(&s, 11).unwrap();
        let mut b: Vec<u32> = trace.queries().iter().map(|q| q.batch_size).collect();
        b.sort_unstable();
        let median = f64::from(b[b.len() / 2]);
        assert!((median - 16.0).abs() <= 1.6, "median {median}");
    }

    #[test]
    fn gaussian_batches_are_clamped() {
        let mut s = spec(100.0);
        s.batch_dist = BatchDist::Gaussian { mean: 10.0, std: 20.0 };
        s.batch_min = 2;
        s.batch_max = 30;
        let trace = generate_stream(&s, 5).unwrap();
        assert!(trace.queries().iter().all(|q| (2..=30).contains(&q.batch_size)));
    }

    #[test]
    fn scale_load_examples() {
        assert_eq!(scale_load(&spec(100.0), 1.5).unwrap().arrival_rate, 150.0);
        assert_eq!(scale_load(&spec(100.0), 1.0).unwrap(), spec(100.0));
        let scaled = scale_load(&spec(40.0), 0.5).unwrap();
        assert_eq!(scaled.arrival_rate, 20.0);
        assert_eq!(scaled.qos, spec(40.0).qos);
        assert!(scale_load(&spec(40.0), 0.0).is_err());
        assert!(scale_load(&spec(40.0), -1.0).is_err());
    }

    #[test]
    fn scaled_trace_keeps_batches() {
        let s = spec(100.0);
        let a = generate_stream(&s, 9).unwrap();
        let b = generate_stream(&scale_load(&s, 1.5).unwrap(), 9).unwrap();
        for (x, y) in a.queries().iter().zip(b.queries()) {
            assert_eq!(x.batch_size, y.batch_size);
            approx::assert_relative_eq!(x.arrival_time_s, 1.5 * y.arrival_time_s, max_relative = 1e-12);
        }
    }

    #[test]
    fn rate_change_mid_trace() {
        let mut s = spec(100.0);
        s.num_queries = 20_000;
        let t = generate_with_rate_change(&s, 2, 2.0, 10_000).unwrap();
        let q = t.queries();
        let first = q[9_999].arrival_time_s;
        let second = q[19_999].arrival_time_s - first;
        assert!((second / first - 0.5).abs() < 0.05);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(0.0);
        assert!(s.validate().is_err());
        s.arrival_rate = 1.0;
        s.batch_min = 10;
        s.batch_max = 5;
        assert!(s.validate().is_err());
        assert!(QoSTarget::new(20.0, 1.0).is_err());
        assert!(QoSTarget::new(0.0, 0.9).is_err());
    }

    #[test]
    fn trace_csv_export() {
        let trace = QueryTrace::from_queries(
            vec![
                Query {
                    arrival_time_s: 0.0,
                    batch_size: 4,
                },
                Query {
                    arrival_time_s: 0.5,
                    batch_size: 16,
                },
            ],
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "arrival_time_s,batch_size\n0,4\n0.5,16\n"
        );
        assert!(QueryTrace::from_queries(
            vec![
                Query {
                    arrival_time_s: 1.0,
                    batch_size: 4
                },
                Query {
                    arrival_time_s: 0.5,
                    batch_size: 4
                },
            ],
            0
        )
        .is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let s: WorkloadSpec =
            serde_json::from_str(r#"{"arrival_rate": 120, "qos": {"latency_target_ms": 20}}"#).unwrap();
        assert_eq!(s.num_queries, 10_000);
        assert_eq!(s.batch_max, 256);
        assert_eq!(s.qos.satisfaction_quantile, 0.99);
        assert_eq!(s.batch_dist, BatchDist::default());
    }

    proptest! {
        #[test]
        fn traces_are_well_formed(
            rate in 1.0f64..1000.0,
            n in 1usize..500,
            seed in any::<u64>(),
            lo in 1u32..8,
            width in 0u32..64,
        ) {
            let mut s = spec(rate);
            s.num_queries = n;
            s.batch_min = lo;
            s.batch_max = lo + width;
            let t = generate_stream(&s, seed).unwrap();
            prop_assert_eq!(t.len(), n);
            prop_assert!(t.queries().windows(2).all(|w| w[0].arrival_time_s <= w[1].arrival_time_s));
            prop_assert!(t.queries().iter().all(|q| q.batch_size >= lo && q.batch_size <= lo + width));
        }
    }
}
