//! Exact fractional Gaussian noise.
//!
//! Likelihood, simulation and prediction all run on the Durbin-Levinson
//! recursion over the Toeplitz covariance, so they cost O(n^2) and never
//! materialize an n x n matrix. The precision matrix itself is available
//! through the Trench algorithm, and [`conditional_exact`] provides the
//! O(n^3) dense reference for arbitrary noise and missing data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dense::{gaussian_conditional, DenseMatrix};
use crate::error::{FgnError, Result};
use crate::hurst::{validate_hurst, HurstParams};
use crate::observation::ObservationModel;

/// Partial innovation variances below this fraction of the marginal
/// variance are reported as numerical breakdown.
pub const INNOVATION_FLOOR: f64 = 1e-13;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Autocorrelation values at lags `0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcfVector {
    values: Vec<f64>,
    hurst: f64,
}

impl AcfVector {
    /// Wraps an arbitrary autocorrelation sequence. `values[0]` must be 1.
    pub fn from_values(values: Vec<f64>, hurst: f64) -> Result<Self> {
        match values.first() {
            Some(&v) if (v - 1.0).abs() < 1e-12 => Ok(Self { values, hurst }),
            Some(&v) => Err(FgnError::Domain {
                name: "acf[0]",
                value: v,
                range: "{1}",
            }),
            None => Err(FgnError::Dimension("empty autocorrelation".into())),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }
}

/// fGn autocorrelation `0.5 (|k-1|^2H - 2|k|^2H + |k+1|^2H)` for `k = 0..=max_lag`.
pub fn fgn_acf(hurst: f64, max_lag: usize) -> Result<AcfVector> {
    validate_hurst(hurst)?;
    let two_h = 2.0 * hurst;
    let values = (0..=max_lag).map(|k| fgn_acf_at(two_h, k)).collect();
    Ok(AcfVector { values, hurst })
}

fn fgn_acf_at(two_h: f64, k: usize) -> f64 {
    match k {
        0 => 1.0,
        1 => 0.5 * (2f64.powf(two_h) - 2.0),
        _ => {
            // k^2H * ((1-1/k)^2H - 2 + (1+1/k)^2H) / 2, written with expm1
            // to avoid cancelling three O(k^2H) terms
            let kf = k as f64;
            let r = 1.0 / kf;
            let lower = (two_h * (-r).ln_1p()).exp_m1();
            let upper = (two_h * r.ln_1p()).exp_m1();
            0.5 * kf.powf(two_h) * (lower + upper)
        }
    }
}

/// Runs the Durbin-Levinson recursion on a unit-variance autocorrelation,
/// calling `visit(t, phi, v)` for `t = 0..n` with the order-`t` prediction
/// coefficients `phi[j-1] = phi_{t,j}` and innovation variance `v_t`.
pub(crate) fn durbin_levinson<F>(acf: &[f64], n: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &[f64], f64),
{
    if acf.len() < n {
        return Err(FgnError::Dimension(format!(
            "autocorrelation has {} lags, need {n}",
            acf.len()
        )));
    }
    let mut phi: Vec<f64> = Vec::with_capacity(n);
    let mut prev: Vec<f64> = Vec::with_capacity(n);
    let mut v = acf[0];
    for t in 0..n {
        if t > 0 {
            let mut num = acf[t];
            for (j, p) in phi.iter().enumerate() {
                num -= p * acf[t - 1 - j];
            }
            let reflection = num / v;
            prev.clear();
            prev.extend_from_slice(&phi);
            for j in 0..prev.len() {
                phi[j] = prev[j] - reflection * prev[prev.len() - 1 - j];
            }
            phi.push(reflection);
            v *= 1.0 - reflection * reflection;
        }
        if !(v >= INNOVATION_FLOOR * acf[0]) {
            return Err(FgnError::Breakdown { step: t, variance: v });
        }
        visit(t, &phi, v);
    }
    Ok(())
}

/// Zero-mean Gaussian with Toeplitz covariance `sigma^2 * acf(|i-j|)`.
#[derive(Debug, Clone)]
pub struct ToeplitzGaussian {
    acf: AcfVector,
    sigma: f64,
    n: usize,
}

/// Sufficient statistics of the unit-scale likelihood: sum of log
/// innovation variances and the standardized residual sum of squares.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UnitLikelihood {
    pub sum_log_var: f64,
    pub quad: f64,
}

impl ToeplitzGaussian {
    pub fn new(acf: AcfVector, sigma: f64, n: usize) -> Result<Self> {
        if acf.values().len() < n {
            return Err(FgnError::Dimension(format!(
                "autocorrelation has {} lags, need {n}",
                acf.values().len()
            )));
        }
        Ok(Self { acf, sigma, n })
    }

    /// fGn of length `n`.
    pub fn fgn(params: &HurstParams, n: usize) -> Result<Self> {
        let acf = fgn_acf(params.hurst(), n.saturating_sub(1))?;
        Self::new(acf, params.sigma(), n)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn acf(&self) -> &AcfVector {
        &self.acf
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub(crate) fn unit_likelihood(&self, x: &[f64]) -> Result<UnitLikelihood> {
        self.check_len(x.len())?;
        let mut sum_log_var = 0.0;
        let mut quad = 0.0;
        durbin_levinson(self.acf.values(), self.n, |t, phi, v| {
            let pred: f64 = phi.iter().enumerate().map(|(j, p)| p * x[t - 1 - j]).sum();
            let e = x[t] - pred;
            sum_log_var += v.ln();
            quad += e * e / v;
        })?;
        Ok(UnitLikelihood { sum_log_var, quad })
    }

    /// Exact log-density of `x`.
    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        let u = self.unit_likelihood(x)?;
        let n = self.n as f64;
        let s2 = self.sigma * self.sigma;
        Ok(-0.5 * n * LN_2PI - 0.5 * n * s2.ln() - 0.5 * u.sum_log_var - 0.5 * u.quad / s2)
    }

    /// One exact draw by recursive conditional sampling (Hosking).
    pub fn simulate(&self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; self.n];
        durbin_levinson(self.acf.values(), self.n, |t, phi, v| {
            let pred: f64 = phi.iter().enumerate().map(|(j, p)| p * x[t - 1 - j]).sum();
            let z: f64 = StandardNormal.sample(&mut rng);
            x[t] = pred + v.sqrt() * z;
        })?;
        x.iter_mut().for_each(|v| *v *= self.sigma);
        Ok(x)
    }

    /// Precision matrix via the Trench algorithm.
    pub fn precision(&self) -> Result<DenseMatrix> {
        let mut q = trench_inverse(&self.acf, self.n)?;
        let s2 = self.sigma * self.sigma;
        for i in 0..self.n {
            for j in 0..self.n {
                q[(i, j)] /= s2;
            }
        }
        Ok(q)
    }

    /// Dense covariance matrix.
    pub fn covariance(&self) -> DenseMatrix {
        let s2 = self.sigma * self.sigma;
        DenseMatrix::from_fn(self.n, |i, j| s2 * self.acf.values()[i.abs_diff(j)])
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.n {
            Ok(())
        } else {
            Err(FgnError::Dimension(format!(
                "data has length {len}, model has length {}",
                self.n
            )))
        }
    }
}

/// Exact fGn log-density of `x` in O(n^2).
pub fn loglik_exact(x: &[f64], params: &HurstParams) -> Result<f64> {
    ToeplitzGaussian::fgn(params, x.len())?.loglik(x)
}

/// Exact fGn draw of length `n`, deterministic in `seed`.
pub fn simulate_exact(params: &HurstParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(FgnError::Dimension("cannot simulate an empty series".into()));
    }
    ToeplitzGaussian::fgn(params, n)?.simulate(seed)
}

/// Inverse of the unit-variance `n x n` Toeplitz matrix built from `acf`,
/// by the Trench algorithm. The result is symmetric and persymmetric.
pub fn trench_inverse(acf: &AcfVector, n: usize) -> Result<DenseMatrix> {
    let r = acf.values();
    if n == 0 {
        return Ok(DenseMatrix::zeros(0));
    }
    if r.len() < n {
        return Err(FgnError::Dimension(format!(
            "autocorrelation has {} lags, need {n}",
            r.len()
        )));
    }
    // Yule-Walker solution of order n-1: y = -phi_{n-1}, gamma = 1 / v_{n-1}
    let mut phi = Vec::new();
    let mut v_last = 1.0;
    durbin_levinson(r, n, |t, p, v| {
        if t == n - 1 {
            phi = p.to_vec();
            v_last = v;
        }
    })?;
    let gamma = 1.0 / v_last;
    // nu[k] = gamma * y[n-2-k]
    let nu: Vec<f64> = (0..n - 1).map(|k| -gamma * phi[n - 2 - k]).collect();

    let mut b = DenseMatrix::zeros(n);
    let put = |b: &mut DenseMatrix, i: usize, j: usize, val: f64| {
        b[(i, j)] = val;
        b[(j, i)] = val;
        b[(n - 1 - i, n - 1 - j)] = val;
        b[(n - 1 - j, n - 1 - i)] = val;
    };
    put(&mut b, 0, 0, gamma);
    for j in 1..n {
        put(&mut b, 0, j, nu[n - 1 - j]);
    }
    for i in 1..=(n - 1) / 2 {
        for j in i..n - i {
            let val = b[(i - 1, j - 1)] + (nu[n - 1 - j] * nu[n - 1 - i] - nu[i - 1] * nu[j - 1]) / gamma;
            put(&mut b, i, j, val);
        }
    }
    Ok(b)
}

/// Conditional mean and standard deviation of latent fGn at all data and
/// horizon points given noisy or missing observations.
///
/// This is the dense O((n+p)^3) reference route; horizon points carry zero
/// observation precision.
pub fn conditional_exact(
    obs: &ObservationModel,
    params: &HurstParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if obs.observed_count() == 0 {
        return Err(FgnError::NoData);
    }
    let total = obs.total_len();
    let model = ToeplitzGaussian::fgn(params, total)?;
    gaussian_conditional(
        &model.covariance(),
        &obs.extended_y(),
        &obs.extended_precision(),
    )
}
