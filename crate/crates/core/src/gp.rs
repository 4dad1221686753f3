//! Gaussian-process surrogate over integer pool configurations.
//!
//! The covariance is a Matern 5/2 kernel evaluated on inputs rounded to the
//! nearest integer, so every point inside one integer cell is perfectly
//! correlated with the cell's lattice point. Once a configuration has been
//! observed its whole cell has (near) zero posterior variance, which keeps the
//! acquisition function from proposing it again.
//!
//! The posterior is exact: `K + D = L L^T` by Cholesky, then
//! `mean(x) = mu0 + k*^T (K + D)^-1 (y - mu0)` and
//! `var(x) = k(x, x) - |L^-1 k*|^2`.

use thiserror::Error;

/// Largest diagonal term the factorization will add before giving up.
pub const MAX_JITTER: f64 = 1e-4;
/// Default observation noise. Small enough that a re-observed cell has
/// posterior variance well under 1e-8.
pub const DEFAULT_NOISE_VARIANCE: f64 = 1e-10;
/// Floor for the signal variance estimated from observed values.
pub const MIN_SIGNAL_VARIANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("gaussian process needs at least one observation")]
    Empty,
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("observations {first} and {second} round to the same configuration")]
    DuplicateObservation { first: usize, second: usize },
    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
}

type GpResult<T> = std::result::Result<T, GpError>;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_variance: f64) -> GpResult<Self> {
        let p = KernelParams {
            signal_variance,
            lengthscales,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Lengthscale `fraction * m_d` per dimension, unit signal variance.
    pub fn for_bounds(bounds: &[u32], fraction: f64) -> GpResult<Self> {
        KernelParams::new(
            1.0,
            bounds.iter().map(|&m| fraction * f64::from(m.max(1))).collect(),
            DEFAULT_NOISE_VARIANCE,
        )
    }

    pub fn dims(&self) -> usize {
        self.lengthscales.len()
    }

    fn validate(&self) -> GpResult<()> {
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(GpError::InvalidParams("signal variance must be > 0".into()));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(GpError::InvalidParams("lengthscales must be > 0".into()));
        }
        if !(self.noise_variance >= 0.0) || !self.noise_variance.is_finite() {
            return Err(GpError::InvalidParams("noise variance must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_dims(a: &[f64], b: &[f64], params: &KernelParams) -> GpResult<()> {
    let d = params.dims();
    for v in [a, b] {
        if v.len() != d {
            return Err(GpError::Dimension {
                expected: d,
                got: v.len(),
            });
        }
    }
    Ok(())
}

fn scaled_distance(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| {
            let t = (x - y) / l;
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

fn matern52_at(r: f64, signal_variance: f64) -> f64 {
    let s5r = 5f64.sqrt() * r;
    signal_variance * (1.0 + s5r + 5.0 * r * r / 3.0) * (-s5r).exp()
}

/// Matern 5/2 covariance with per-dimension lengthscales.
pub fn matern52(a: &[f64], b: &[f64], params: &KernelParams) -> GpResult<f64> {
    check_dims(a, b, params)?;
    Ok(matern52_at(
        scaled_distance(a, b, &params.lengthscales),
        params.signal_variance,
    ))
}

/// Component-wise nearest integer, halves away from zero.
pub fn round_point(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.round()).collect()
}

/// Matern 5/2 evaluated on the rounded inputs.
pub fn rounded_kernel(a: &[f64], b: &[f64], params: &KernelParams) -> GpResult<f64> {
    check_dims(a, b, params)?;
    matern52(&round_point(a), &round_point(b), params)
}

/// One training point. `extra_noise` is added to the model noise on this
/// point's diagonal entry, which lets estimated values count for less than
/// measured ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub input: Vec<f64>,
    pub value: f64,
    pub extra_noise: f64,
}

impl Observation {
    pub fn exact(input: Vec<f64>, value: f64) -> Self {
        Observation {
            input,
            value,
            extra_noise: 0.0,
        }
    }
}

/// Fitted GP: rounded inputs, Cholesky factor and weights.
#[derive(Debug, Clone)]
pub struct GpState {
    inputs: Vec<Vec<f64>>,
    values: Vec<f64>,
    prior_mean: f64,
    params: KernelParams,
    /// Row-major lower-triangular factor of `K + D`.
    chol: Vec<f64>,
    /// `(K + D)^-1 (y - prior_mean)`.
    alpha: Vec<f64>,
    /// Noise actually placed on the diagonal after escalation.
    jitter: f64,
}

impl GpState {
    /// Zero prior mean, equal noise on every point.
    pub fn fit(inputs: &[Vec<f64>], values: &[f64], params: &KernelParams) -> GpResult<Self> {
        if inputs.len() != values.len() {
            return Err(GpError::Dimension {
                expected: inputs.len(),
                got: values.len(),
            });
        }
        let obs: Vec<Observation> = inputs
            .iter()
            .zip(values)
            .map(|(x, &y)| Observation::exact(x.clone(), y))
            .collect();
        GpState::fit_observations(&obs, params, 0.0)
    }

    pub fn fit_observations(obs: &[Observation], params: &KernelParams, prior_mean: f64) -> GpResult<Self> {
        params.validate()?;
        if obs.is_empty() {
            return Err(GpError::Empty);
        }
        let d = params.dims();
        let n = obs.len();
        let inputs: Vec<Vec<f64>> = obs
            .iter()
            .map(|o| {
                if o.input.len() != d {
                    Err(GpError::Dimension {
                        expected: d,
                        got: o.input.len(),
                    })
                } else {
                    Ok(round_point(&o.input))
                }
            })
            .collect::<GpResult<_>>()?;
        for i in 0..n {
            for j in 0..i {
                if inputs[i] == inputs[j] {
                    return Err(GpError::DuplicateObservation { first: j, second: i });
                }
            }
        }

        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = matern52_at(
                    scaled_distance(&inputs[i], &inputs[j], &params.lengthscales),
                    params.signal_variance,
                );
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }

        let mut jitter = params.noise_variance;
        let chol = loop {
            let mut a = gram.clone();
            for (i, o) in obs.iter().enumerate() {
                a[i * n + i] += jitter + o.extra_noise;
            }
            if cholesky_in_place(&mut a, n) {
                break a;
            }
            let next = jitter.max(1e-10) * 10.0;
            if next > MAX_JITTER * (1.0 + 1e-12) {
                return Err(GpError::NotPositiveDefinite { jitter });
            }
            jitter = next;
        };

        let centered: Vec<f64> = obs.iter().map(|o| o.value - prior_mean).collect();
        let alpha = cholesky_solve(&chol, n, &centered);
        Ok(GpState {
            inputs,
            values: obs.iter().map(|o| o.value).collect(),
            prior_mean,
            params: params.clone(),
            chol,
            alpha,
            jitter,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    /// Rounded training inputs.
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Lower Cholesky factor as rows.
    pub fn factor(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..n).map(|i| self.chol[i * n..(i + 1) * n].to_vec()).collect()
    }

    /// Posterior mean and variance (variance clamped at zero). Panics on a
    /// dimension mismatch.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        assert_eq!(x.len(), self.params.dims(), "posterior input dimension");
        let n = self.len();
        let xr = round_point(x);
        let kstar: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| {
                matern52_at(
                    scaled_distance(xi, &xr, &self.params.lengthscales),
                    self.params.signal_variance,
                )
            })
            .collect();
        let mean = self.prior_mean + kstar.iter().zip(&self.alpha).map(|(k, a)| k * a).sum::<f64>();
        let v = forward_substitute(&self.chol, n, &kstar);
        let var = self.params.signal_variance - v.iter().map(|t| t * t).sum::<f64>();
        (mean, var.max(0.0))
    }

    /// `log p(y | X)` under the fitted hyperparameters.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len();
        let fit: f64 = self
            .values
            .iter()
            .zip(&self.alpha)
            .map(|(y, a)| (y - self.prior_mean) * a)
            .sum();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Coordinate-wise search over lengthscale multipliers, keeping whichever
/// setting gives the highest marginal likelihood. One sweep over the
/// dimensions; ties keep the current value.
pub fn tune_lengthscales(
    obs: &[Observation],
    base: &KernelParams,
    prior_mean: f64,
    multipliers: &[f64],
) -> GpResult<KernelParams> {
    let mut best = base.clone();
    let mut best_lml = GpState::fit_observations(obs, &best, prior_mean)?.log_marginal_likelihood();
    for d in 0..base.dims() {
        let anchor = best.lengthscales[d];
        let mut chosen = anchor;
        for &mult in multipliers {
            if mult == 1.0 {
                continue;
            }
            let mut trial = best.clone();
            trial.lengthscales[d] = anchor * mult;
            if let Ok(state) = GpState::fit_observations(obs, &trial, prior_mean) {
                let lml = state.log_marginal_likelihood();
                if lml > best_lml {
                    best_lml = lml;
                    chosen = anchor * mult;
                }
            }
        }
        best.lengthscales[d] = chosen;
    }
    Ok(best)
}

/// In-place Cholesky of a row-major SPD matrix; the strict upper triangle is
/// zeroed. Returns `false` if a pivot is not positive.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / ljj;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

fn forward_substitute(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let y = forward_substitute(l, n, b);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Population variance of `values`, floored at [`MIN_SIGNAL_VARIANCE`].
pub fn signal_variance_of(values: &[f64]) -> f64 {
    if values.is_empty() {
        return MIN_SIGNAL_VARIANCE;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.max(MIN_SIGNAL_VARIANCE)
}
