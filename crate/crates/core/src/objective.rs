//! The scalar search objective and the cost-effectiveness figure of merit.
//!
//! The objective maps a configuration to `[0, 1]`:
//!
//! ```text
//! f(x) = 1/2 * R_sat(x) / T_qos                        if R_sat(x) < T_qos
//!        1/2 + 1/2 * (1 - sum(p_i x_i) / sum(p_i m_i))  otherwise
//! ```
//!
//! Every configuration meeting the QoS target scores at least 1/2, every
//! violating one strictly less. Violators are still ranked by how close they
//! come, which keeps the landscape smooth across the QoS boundary.

use serde::{Deserialize, Serialize};

use crate::catalog::{cost_with_prices, Catalog, PoolConfig};
use crate::error::{Error, Result};

/// Prices `p`, upper bounds `m` and satisfaction target `T_qos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveContext {
    prices: Vec<f64>,
    upper_bounds: Vec<u32>,
    t_qos: f64,
    max_cost: f64,
}

impl ObjectiveContext {
    pub fn new(prices: Vec<f64>, upper_bounds: Vec<u32>, t_qos: f64) -> Result<Self> {
        if prices.len() != upper_bounds.len() {
            return Err(Error::Dimension {
                expected: prices.len(),
                got: upper_bounds.len(),
            });
        }
        if prices.is_empty() {
            return Err(Error::InvalidArgument("objective needs at least one type".into()));
        }
        if prices.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("all prices must be > 0".into()));
        }
        if upper_bounds.contains(&0) {
            return Err(Error::InvalidArgument("all upper bounds must be >= 1".into()));
        }
        if !(t_qos > 0.0 && t_qos < 1.0) {
            return Err(Error::InvalidArgument(format!("t_qos must be in (0, 1), got {t_qos}")));
        }
        let max_cost = prices.iter().zip(&upper_bounds).map(|(p, &m)| p * f64::from(m)).sum();
        Ok(ObjectiveContext {
            prices,
            upper_bounds,
            t_qos,
            max_cost,
        })
    }

    pub fn from_catalog(catalog: &Catalog, t_qos: f64) -> Result<Self> {
        ObjectiveContext::new(catalog.prices(), catalog.upper_bounds().to_vec(), t_qos)
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn upper_bounds(&self) -> &[u32] {
        &self.upper_bounds
    }

    pub fn t_qos(&self) -> f64 {
        self.t_qos
    }

    pub fn dims(&self) -> usize {
        self.prices.len()
    }

    /// Cost of the all-`m` configuration.
    pub fn max_cost(&self) -> f64 {
        self.max_cost
    }

    pub fn cost(&self, x: &PoolConfig) -> Result<f64> {
        cost_with_prices(x, &self.prices)
    }

    /// `true` when `r_sat` meets the target. The boundary counts as meeting it.
    pub fn satisfies(&self, r_sat: f64) -> bool {
        r_sat >= self.t_qos
    }
}

/// Scores configuration `x` with measured satisfaction rate `r_sat`.
pub fn objective(x: &PoolConfig, r_sat: f64, ctx: &ObjectiveContext) -> Result<f64> {
    x.check_bounds(ctx.upper_bounds())?;
    if !(0.0..=1.0).contains(&r_sat) {
        return Err(Error::InvalidArgument(format!("r_sat must be in [0, 1], got {r_sat}")));
    }
    if !ctx.satisfies(r_sat) {
        return Ok(0.5 * r_sat / ctx.t_qos);
    }
    let ratio = ctx.cost(x)? / ctx.max_cost;
    Ok(0.5 + 0.5 * (1.0 - ratio))
}

/// Queries served per currency unit: `3600 * perf / price`, with `perf` in
/// queries per second and `price` per hour.
pub fn cost_effectiveness(perf_qps: f64, price_per_hour: f64) -> Result<f64> {
    if !(price_per_hour > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "price must be > 0, got {price_per_hour}"
        )));
    }
    if !(perf_qps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "throughput must be >= 0, got {perf_qps}"
        )));
    }
    Ok(3600.0 * perf_qps / price_per_hour)
}
