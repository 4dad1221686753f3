//! Instance types, pool configurations and their cost.
//!
//! A [`Catalog`] is the ordered list of instance types a pool may draw from,
//! plus a per-type upper bound on the instance count. The declaration order is
//! significant: the simulator dispatches queries to idle instances in that
//! order.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, SimEvaluator};
use crate::objective::cost_effectiveness;
use crate::simulator::SimOptions;
use crate::workload::{QoSTarget, QueryTrace};

/// Default rate tolerance for [`compute_upper_bound`].
pub const DEFAULT_BOUND_EPSILON: f64 = 0.001;
/// Default count cap for [`compute_upper_bound`].
pub const DEFAULT_BOUND_CAP: u32 = 32;
/// Default latency relaxation used by [`suggest_pool`].
pub const DEFAULT_RELAXATION: f64 = 1.3;

#[derive(Debug, Error, PartialEq)]
pub enum CatalogError {
    #[error("failed to read catalog {path}: {message}")]
    Read { path: String, message: String },
    #[error("failed to parse catalog: {0}")]
    Parse(String),
    #[error("instance type {name:?}: non-positive price {price}")]
    NonPositivePrice { name: String, price: f64 },
    #[error("instance type {name:?}: empty latency profile")]
    EmptyProfile { name: String },
    #[error("instance type {name:?}: latency profile anchors not increasing ({prev} then {next})")]
    AnchorsNotIncreasing { name: String, prev: u32, next: u32 },
    #[error("instance type {name:?}: latency anchor at batch {batch} must have batch >= 1 and service time > 0")]
    BadAnchor { name: String, batch: u32 },
    #[error("instance type {name:?}: lognormal noise sigma must be finite and >= 0")]
    BadNoise { name: String },
    #[error("duplicate type name {0:?}")]
    DuplicateName(String),
    #[error("catalog has no instance types")]
    Empty,
    #[error("upper_bounds has {got} entries for {expected} types")]
    BoundsLength { expected: usize, got: usize },
    #[error("upper bound for {name:?} must be >= 1")]
    ZeroBound { name: String },
    #[error("catalog has no upper_bounds; compute them first")]
    MissingBounds,
    #[error("unknown instance type {0:?}")]
    UnknownType(String),
}

/// Multiplicative noise applied to service times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ServiceNoise {
    #[default]
    None,
    /// Service time is multiplied by `exp(sigma * z)`, `z ~ N(0, 1)`.
    Lognormal { sigma: f64 },
}

impl ServiceNoise {
    pub fn sigma(&self) -> f64 {
        match *self {
            ServiceNoise::None => 0.0,
            ServiceNoise::Lognormal { sigma } => sigma,
        }
    }
}

/// A priced instance family with a batch-size to service-latency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceType {
    pub name: String,
    pub price_per_hour: f64,
    /// `(batch_size, mean_service_ms)` anchors, batch strictly increasing.
    pub latency_profile: Vec<(u32, f64)>,
    #[serde(default)]
    pub service_noise: ServiceNoise,
}

impl InstanceType {
    pub fn new(
        name: impl Into<String>,
        price_per_hour: f64,
        latency_profile: Vec<(u32, f64)>,
    ) -> std::result::Result<Self, CatalogError> {
        let ty = InstanceType {
            name: name.into(),
            price_per_hour,
            latency_profile,
            service_noise: ServiceNoise::None,
        };
        ty.validate()?;
        Ok(ty)
    }

    pub fn with_noise(mut self, noise: ServiceNoise) -> Self {
        self.service_noise = noise;
        self
    }

    fn validate(&self) -> std::result::Result<(), CatalogError> {
        let name = || self.name.clone();
        if !(self.price_per_hour > 0.0) || !self.price_per_hour.is_finite() {
            return Err(CatalogError::NonPositivePrice {
                name: name(),
                price: self.price_per_hour,
            });
        }
        if self.latency_profile.is_empty() {
            return Err(CatalogError::EmptyProfile { name: name() });
        }
        for &(batch, ms) in &self.latency_profile {
            if batch == 0 || !(ms > 0.0) || !ms.is_finite() {
                return Err(CatalogError::BadAnchor { name: name(), batch });
            }
        }
        for pair in self.latency_profile.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(CatalogError::AnchorsNotIncreasing {
                    name: name(),
                    prev: pair[0].0,
                    next: pair[1].0,
                });
            }
        }
        let sigma = self.service_noise.sigma();
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(CatalogError::BadNoise { name: name() });
        }
        Ok(())
    }

    /// Noise-free service time: linear interpolation between the bracketing
    /// anchors, flat beyond either end of the table.
    pub fn mean_service_ms(&self, batch: u32) -> f64 {
        let profile = &self.latency_profile;
        let (first_batch, first_ms) = profile[0];
        if batch <= first_batch {
            return first_ms;
        }
        for pair in profile.windows(2) {
            let (b0, t0) = pair[0];
            let (b1, t1) = pair[1];
            if batch <= b1 {
                let w = f64::from(batch - b0) / f64::from(b1 - b0);
                return t0 + w * (t1 - t0);
            }
        }
        profile[profile.len() - 1].1
    }
}

/// Counts of each instance type, in catalog order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoolConfig(Vec<u32>);

impl PoolConfig {
    pub fn new(counts: Vec<u32>) -> Self {
        PoolConfig(counts)
    }

    pub fn zeros(n: usize) -> Self {
        PoolConfig(vec![0; n])
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn total_instances(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Coordinate-wise `self <= other`.
    pub fn dominated_by(&self, other: &PoolConfig) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn as_point(&self) -> Vec<f64> {
        self.0.iter().map(|&c| f64::from(c)).collect()
    }

    /// `true` when every count is within `bounds`.
    pub fn within(&self, bounds: &[u32]) -> bool {
        self.0.len() == bounds.len() && self.0.iter().zip(bounds).all(|(c, m)| c <= m)
    }

    pub fn check_bounds(&self, bounds: &[u32]) -> Result<()> {
        if self.0.len() != bounds.len() {
            return Err(Error::Dimension {
                expected: bounds.len(),
                got: self.0.len(),
            });
        }
        match self.0.iter().zip(bounds).position(|(c, m)| c > m) {
            Some(index) => Err(Error::OutOfBounds {
                config: self.to_string(),
                index,
            }),
            None => Ok(()),
        }
    }

    /// Parses the `3;4;0` form produced by `Display`.
    pub fn parse(s: &str) -> Option<Self> {
        s.split(';')
            .map(|p| p.trim().parse::<u32>().ok())
            .collect::<Option<Vec<_>>>()
            .map(PoolConfig)
    }
}

impl From<Vec<u32>> for PoolConfig {
    fn from(v: Vec<u32>) -> Self {
        PoolConfig(v)
    }
}

impl fmt::Display for PoolConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Number of configurations in the grid `[0, m_1] x ... x [0, m_n]`.
pub fn grid_size(bounds: &[u32]) -> u128 {
    bounds.iter().map(|&m| u128::from(m) + 1).product()
}

/// Every in-bounds configuration, in lexicographic order.
pub fn grid(bounds: &[u32]) -> GridIter {
    GridIter {
        bounds: bounds.to_vec(),
        next: Some(vec![0; bounds.len()]),
    }
}

#[derive(Debug, Clone)]
pub struct GridIter {
    bounds: Vec<u32>,
    next: Option<Vec<u32>>,
}

impl Iterator for GridIter {
    type Item = PoolConfig;

    fn next(&mut self) -> Option<PoolConfig> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        // odometer increment, last coordinate fastest
        let mut carried = true;
        for d in (0..succ.len()).rev() {
            if succ[d] < self.bounds[d] {
                succ[d] += 1;
                carried = false;
                break;
            }
            succ[d] = 0;
        }
        if !carried {
            self.next = Some(succ);
        }
        Some(PoolConfig(current))
    }
}

/// An ordered set of instance types with per-type count bounds `m_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Catalog {
    types: Vec<InstanceType>,
    upper_bounds: Vec<u32>,
}

impl Catalog {
    pub fn new(types: Vec<InstanceType>, upper_bounds: Vec<u32>) -> std::result::Result<Self, CatalogError> {
        validate_types(&types)?;
        if upper_bounds.len() != types.len() {
            return Err(CatalogError::BoundsLength {
                expected: types.len(),
                got: upper_bounds.len(),
            });
        }
        if let Some(i) = upper_bounds.iter().position(|&m| m == 0) {
            return Err(CatalogError::ZeroBound {
                name: types[i].name.clone(),
            });
        }
        Ok(Catalog { types, upper_bounds })
    }

    pub fn types(&self) -> &[InstanceType] {
        &self.types
    }

    pub fn upper_bounds(&self) -> &[u32] {
        &self.upper_bounds
    }

    pub fn prices(&self) -> Vec<f64> {
        self.types.iter().map(|t| t.price_per_hour).collect()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn with_upper_bounds(self, upper_bounds: Vec<u32>) -> std::result::Result<Self, CatalogError> {
        Catalog::new(self.types, upper_bounds)
    }

    /// The configuration with every type at its upper bound.
    pub fn max_config(&self) -> PoolConfig {
        PoolConfig(self.upper_bounds.clone())
    }

    /// Restricts the catalog to the named types, keeping catalog order.
    pub fn subset(&self, names: &[String]) -> std::result::Result<Catalog, CatalogError> {
        for n in names {
            if self.index_of(n).is_none() {
                return Err(CatalogError::UnknownType(n.clone()));
            }
        }
        let (types, bounds) = self
            .types
            .iter()
            .zip(&self.upper_bounds)
            .filter(|(t, _)| names.contains(&t.name))
            .map(|(t, &m)| (t.clone(), m))
            .unzip();
        Catalog::new(types, bounds)
    }
}

fn validate_types(types: &[InstanceType]) -> std::result::Result<(), CatalogError> {
    if types.is_empty() {
        return Err(CatalogError::Empty);
    }
    let mut seen = HashSet::new();
    for t in types {
        t.validate()?;
        if !seen.insert(t.name.as_str()) {
            return Err(CatalogError::DuplicateName(t.name.clone()));
        }
    }
    Ok(())
}

/// Catalog as read from disk. Upper bounds are optional in the file format;
/// when absent they have to be computed against a workload before a
/// [`Catalog`] can be built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFile {
    pub types: Vec<InstanceType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bounds: Option<Vec<u32>>,
}

impl CatalogFile {
    pub fn parse(json: &str) -> std::result::Result<Self, CatalogError> {
        let file: CatalogFile = serde_json::from_str(json).map_err(|e| CatalogError::Parse(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> std::result::Result<(), CatalogError> {
        validate_types(&self.types)?;
        if let Some(bounds) = &self.upper_bounds {
            Catalog::new(self.types.clone(), bounds.clone())?;
        }
        Ok(())
    }

    /// Builds the catalog, failing if the file carried no upper bounds.
    pub fn into_catalog(self) -> std::result::Result<Catalog, CatalogError> {
        match self.upper_bounds {
            Some(bounds) => Catalog::new(self.types, bounds),
            None => Err(CatalogError::MissingBounds),
        }
    }

    /// Builds the catalog, computing any missing bounds with
    /// [`compute_upper_bound`] against `trace`.
    pub fn resolve(self, trace: &QueryTrace, qos: &QoSTarget, epsilon: f64, cap: u32) -> Result<Catalog> {
        if self.upper_bounds.is_some() {
            return Ok(self.into_catalog()?);
        }
        let n = self.types.len();
        let probe = Catalog::new(self.types, vec![cap; n])?;
        let mut evaluator = SimEvaluator::new(&probe, trace, *qos, SimOptions::default());
        let bounds = (0..n)
            .map(|i| compute_upper_bound(i, n, &mut evaluator, epsilon, cap))
            .collect::<Result<Vec<_>>>()?;
        Ok(probe.with_upper_bounds(bounds)?)
    }
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> std::result::Result<CatalogFile, CatalogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CatalogError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    CatalogFile::parse(&text)
}

/// Hourly price of a pool: `sum_i p_i * x_i`.
pub fn pool_cost(config: &PoolConfig, catalog: &Catalog) -> Result<f64> {
    cost_with_prices(config, &catalog.prices())
}

pub(crate) fn cost_with_prices(config: &PoolConfig, prices: &[f64]) -> Result<f64> {
    if config.len() != prices.len() {
        return Err(Error::Dimension {
            expected: prices.len(),
            got: config.len(),
        });
    }
    Ok(config.counts().iter().zip(prices).map(|(&x, p)| f64::from(x) * p).sum())
}

/// Smallest homogeneous count `u` of type `type_index` such that one more
/// instance raises the satisfaction rate by at most `epsilon`; `cap` if the
/// rate keeps improving up to `cap`.
pub fn compute_upper_bound<E: Evaluator + ?Sized>(
    type_index: usize,
    n_types: usize,
    evaluator: &mut E,
    epsilon: f64,
    cap: u32,
) -> Result<u32> {
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be >= 1".into()));
    }
    if type_index >= n_types {
        return Err(Error::InvalidArgument(format!(
            "type index {type_index} out of range for {n_types} types"
        )));
    }
    let homogeneous = |count: u32| {
        let mut counts = vec![0; n_types];
        counts[type_index] = count;
        PoolConfig(counts)
    };
    let mut prev = evaluator.evaluate(&homogeneous(1))?.r_sat;
    for u in 1..cap {
        let next = evaluator.evaluate(&homogeneous(u + 1))?.r_sat;
        if next <= prev + epsilon {
            return Ok(u);
        }
        prev = next;
    }
    Ok(cap)
}

/// Queries per second of one instance, taken as the reciprocal of its mean
/// noise-free service time over the batch sizes in `trace`.
pub fn throughput_qps(ty: &InstanceType, trace: &QueryTrace) -> f64 {
    let queries = trace.queries();
    if queries.is_empty() {
        return 0.0;
    }
    let total_ms: f64 = queries.iter().map(|q| ty.mean_service_ms(q.batch_size)).sum();
    1000.0 * queries.len() as f64 / total_ms
}

/// Picks the types worth mixing with `base_type`: those that meet the
/// latency target relaxed by `relaxation_factor` as a homogeneous pool at
/// their upper bound, and are strictly more cost-effective than the base.
/// The base type is always included; catalog order is preserved.
pub fn suggest_pool(
    catalog: &Catalog,
    base_type: &str,
    trace: &QueryTrace,
    qos: &QoSTarget,
    relaxation_factor: f64,
) -> Result<Vec<String>> {
    let base = catalog
        .index_of(base_type)
        .ok_or_else(|| CatalogError::UnknownType(base_type.to_string()))?;
    if !(relaxation_factor >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "relaxation factor must be >= 1, got {relaxation_factor}"
        )));
    }
    let relaxed = QoSTarget {
        latency_target_ms: qos.latency_target_ms * relaxation_factor,
        ..*qos
    };
    let base_ty = &catalog.types()[base];
    let base_eff = cost_effectiveness(throughput_qps(base_ty, trace), base_ty.price_per_hour)?;

    let mut evaluator = SimEvaluator::new(catalog, trace, relaxed, SimOptions::default());
    let n = catalog.len();
    let mut chosen = Vec::new();
    for (i, ty) in catalog.types().iter().enumerate() {
        if i == base {
            chosen.push(ty.name.clone());
            continue;
        }
        let eff = cost_effectiveness(throughput_qps(ty, trace), ty.price_per_hour)?;
        if eff <= base_eff {
            continue;
        }
        let mut counts = vec![0; n];
        counts[i] = catalog.upper_bounds()[i];
        let record = evaluator.evaluate(&PoolConfig(counts))?;
        if record.r_sat >= relaxed.satisfaction_quantile {
            chosen.push(ty.name.clone());
        }
    }
    Ok(chosen)
}
