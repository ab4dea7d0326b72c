//! Likelihood, estimation, prediction and model comparison for the exact
//! and approximate fGn models.

use std::cell::{Cell, RefCell};
use std::fmt;

use rayon::prelude::*;

use crate::ar1_fit::{Ar1Mixture, CoeffTable, DEFAULT_HURST_RANGE};
use crate::dense::DenseMatrix;
use crate::error::{domain, FgnError, Result};
use crate::fgn_exact::{fgn_acf, simulate_exact, trench_inverse, ToeplitzGaussian};
use crate::gmrf::{assemble_precision, condition, default_kappa, solve_conditional};
use crate::hurst::{dhurst_dh, h_from_hurst, hurst_from_h, HurstParams};
use crate::observation::ObservationModel;
use crate::optim::brent;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which model a result came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Exact,
    Approx { m: usize },
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Exact => write!(f, "exact"),
            ModelKind::Approx { m } => write!(f, "approx-m{m}"),
        }
    }
}

/// A model ready for evaluation: exact fGn, or the AR(1) mixture looked up
/// from a coefficient table with augmentation precision `kappa`.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Exact,
    Approx { table: &'a CoeffTable, kappa: f64 },
}

impl<'a> Model<'a> {
    /// Approximate model with the default `kappa`.
    pub fn approx(table: &'a CoeffTable) -> Self {
        Model::Approx {
            table,
            kappa: default_kappa(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Exact => ModelKind::Exact,
            Model::Approx { table, .. } => ModelKind::Approx { m: table.m() },
        }
    }

    /// Range of H over which the model can be evaluated.
    pub fn hurst_range(&self) -> (f64, f64) {
        match self {
            Model::Exact => DEFAULT_HURST_RANGE,
            Model::Approx { table, .. } => table.hurst_range(),
        }
    }

    /// Unit-scale covariance of a length-`n` stretch (dense; for oracles).
    pub fn covariance(&self, hurst: f64, n: usize) -> Result<DenseMatrix> {
        match self {
            Model::Exact => {
                DenseMatrix::toeplitz(fgn_acf(hurst, n.saturating_sub(1))?.values(), n, 1.0)
            }
            Model::Approx { table, kappa } => {
                approx_covariance(&table.lookup(hurst)?, n, *kappa)
            }
        }
    }
}

/// Dense `Gamma_mix + I / kappa` at unit scale.
pub fn approx_covariance(mix: &Ar1Mixture, n: usize, kappa: f64) -> Result<DenseMatrix> {
    let acf = mix.acf(n.saturating_sub(1));
    let mut cov = DenseMatrix::toeplitz(acf.values(), n, 1.0)?;
    for i in 0..n {
        cov[(i, i)] += 1.0 / kappa;
    }
    Ok(cov)
}

/// Log-density split into its scale-free parts: at scale `sigma`,
/// `log p = -(n/2) log(2 pi) - logdet/2 - n log(sigma) - quad / (2 sigma^2)`
/// where `logdet` and `quad` belong to the unit-scale covariance.
#[derive(Debug, Clone, Copy)]
struct UnitParts {
    logdet: f64,
    quad: f64,
}

impl UnitParts {
    fn loglik(&self, n: usize, sigma: f64) -> f64 {
        let n = n as f64;
        -0.5 * n * LN_2PI - 0.5 * self.logdet - n * sigma.ln() - 0.5 * self.quad / (sigma * sigma)
    }

    fn profile(&self, n: usize) -> (f64, f64) {
        let sigma = (self.quad / n as f64).sqrt();
        (self.loglik(n, sigma), sigma)
    }
}

/// Approximate-model log-density through the augmented field: with `x`
/// fixed, `z* = E[z | x]` and
/// `log p(x) = -(n/2) log 2 pi + (log|Q| - log|Q_zz|)/2 - v*^T Q v* / 2`.
fn approx_parts(x: &[f64], mix: &Ar1Mixture, sigma: f64, kappa: f64) -> Result<(UnitParts, u64)> {
    let q = assemble_precision(mix, sigma, x.len(), kappa)?;
    let latent = q.latent_given_x(x)?;
    let logdet_cov = latent.cholesky().logdet() - q.logdet_closed_form();
    let v = q.interleave(x, latent.z_mean());
    Ok((
        UnitParts {
            logdet: logdet_cov,
            quad: q.quadratic_form(&v),
        },
        latent.cholesky().flops(),
    ))
}

fn unit_parts(x: &[f64], hurst: f64, model: Model) -> Result<UnitParts> {
    match model {
        Model::Exact => {
            let params = HurstParams::new(hurst, 1.0)?;
            let u = ToeplitzGaussian::fgn(&params, x.len())?.unit_likelihood(x)?;
            Ok(UnitParts {
                logdet: u.sum_log_var,
                quad: u.quad,
            })
        }
        Model::Approx { table, kappa } => {
            let mix = table.lookup(hurst)?;
            Ok(approx_parts(x, &mix, 1.0, kappa)?.0)
        }
    }
}

/// Log-density of `x` under the approximate model at `(hurst, sigma)`, with
/// the mixture taken from `table` and the default `kappa`.
pub fn loglik_approx(x: &[f64], hurst: f64, sigma: f64, table: &CoeffTable) -> Result<f64> {
    let mix = table.lookup(hurst)?;
    loglik_approx_mixture(x, &mix, sigma, default_kappa())
}

/// Log-density of `x` under `sigma (sum_j sqrt(w_j) z_j + e)`, with the
/// precision assembled at `sigma` directly.
pub fn loglik_approx_mixture(x: &[f64], mix: &Ar1Mixture, sigma: f64, kappa: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(FgnError::NoData);
    }
    let (parts, _) = approx_parts(x, mix, sigma, kappa)?;
    // parts already carry sigma; report at unit scale
    Ok(parts.loglik(x.len(), 1.0))
}

/// Same density evaluated at unit scale and rescaled analytically.
pub fn loglik_approx_profiled(x: &[f64], mix: &Ar1Mixture, sigma: f64, kappa: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(FgnError::NoData);
    }
    if !(sigma > 0.0) {
        return Err(domain("sigma", sigma, "(0, inf)"));
    }
    Ok(approx_parts(x, mix, 1.0, kappa)?.0.loglik(x.len(), sigma))
}

/// Flops spent factorizing the conditional precision inside one
/// approximate log-likelihood evaluation.
pub fn loglik_approx_flops(x: &[f64], mix: &Ar1Mixture, kappa: f64) -> Result<u64> {
    Ok(approx_parts(x, mix, 1.0, kappa)?.1)
}

/// Log-density under either model at `(hurst, sigma)`.
pub fn loglik(x: &[f64], hurst: f64, sigma: f64, model: Model) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(domain("sigma", sigma, "(0, inf)"));
    }
    Ok(unit_parts(x, hurst, model)?.loglik(x.len(), sigma))
}

/// Profile log-likelihood in H, with sigma maximized out: returns
/// `(loglik, sigma_hat)`.
pub fn profile_loglik(x: &[f64], hurst: f64, model: Model) -> Result<(f64, f64)> {
    let parts = unit_parts(x, hurst, model)?;
    if !(parts.quad > 0.0) {
        return Err(FgnError::Degenerate("series has zero variance".into()));
    }
    Ok(parts.profile(x.len()))
}

/// Settings for [`mle`].
#[derive(Debug, Clone)]
pub struct MleOptions {
    /// Subtract the sample mean before fitting.
    pub center: bool,
    /// Search interval in H; clipped to the model's range.
    pub hurst_range: (f64, f64),
    /// Points of the coarse scan in h preceding the Brent refinement.
    pub scan_points: usize,
    /// Brent tolerance in h.
    pub tol: f64,
    /// Step in h of the second difference for the curvature.
    pub curvature_step: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            center: true,
            hurst_range: DEFAULT_HURST_RANGE,
            scan_points: 17,
            tol: 1e-7,
            curvature_step: 1e-3,
        }
    }
}

/// Maximum-likelihood fit of `(H, sigma)`.
#[derive(Debug, Clone)]
pub struct MleResult {
    pub hurst: f64,
    pub h: f64,
    pub sigma: f64,
    pub loglik: f64,
    /// Standard error of the H estimate from the curvature of the profile
    /// log-likelihood; NaN when the curvature is not negative.
    pub sd_hurst: f64,
    /// Profile log-likelihood evaluations.
    pub iterations: usize,
    pub model: ModelKind,
    /// Optimum sits at an end of the search interval.
    pub boundary: bool,
    /// Mean subtracted before fitting (0 when not centering).
    pub mean: f64,
}

/// Maximizes the profile likelihood over h by a coarse scan followed by
/// Brent's method on the bracketing cell.
pub fn mle(x: &[f64], model: Model, opts: &MleOptions) -> Result<MleResult> {
    if x.len() < 16 {
        return Err(FgnError::Dimension(format!(
            "need at least 16 observations, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FgnError::Degenerate("series contains non-finite values".into()));
    }
    let mean = if opts.center {
        x.iter().sum::<f64>() / x.len() as f64
    } else {
        0.0
    };
    let data: Vec<f64> = x.iter().map(|v| v - mean).collect();
    if data.iter().all(|&v| v == 0.0) {
        return Err(FgnError::Degenerate("series has zero variance".into()));
    }

    let (lo_model, hi_model) = model.hurst_range();
    let lo = opts.hurst_range.0.max(lo_model);
    let hi = opts.hurst_range.1.min(hi_model);
    if !(lo < hi) || lo <= 0.5 {
        return Err(domain("search interval lower end", lo, "(0.5, upper end)"));
    }
    let (a, b) = (h_from_hurst(lo), h_from_hurst(hi));

    let evaluations = Cell::new(0usize);
    let failure: RefCell<Option<FgnError>> = RefCell::new(None);
    let neg = |h: f64| -> f64 {
        evaluations.set(evaluations.get() + 1);
        match profile_loglik(&data, hurst_from_h(h).clamp(lo, hi), model) {
            Ok((ll, _)) => -ll,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::INFINITY
            }
        }
    };

    let k = opts.scan_points.max(3);
    let grid: Vec<f64> = (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&h| neg(h)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|p, q| p.1.total_cmp(q.1))
        .map(|(i, _)| i)
        .unwrap();
    if !values[best].is_finite() {
        return Err(failure
            .into_inner()
            .unwrap_or_else(|| FgnError::Degenerate("likelihood not finite".into())));
    }
    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(k - 1)];
    let (mut h_hat, mut f_hat, _) = brent(neg, left, right, opts.tol, 200);
    if values[best] < f_hat {
        h_hat = grid[best];
        f_hat = values[best];
    }
    let cell = (b - a) / (k - 1) as f64;
    let boundary = (h_hat - a) < 1e-3 * cell || (b - h_hat) < 1e-3 * cell;

    let hurst = hurst_from_h(h_hat).clamp(lo, hi);
    let (loglik, sigma) = profile_loglik(&data, hurst, model)?;

    // curvature in h, stencil kept inside the interval
    let step = opts.curvature_step;
    let centre = h_hat.clamp(a + step, b - step);
    let f0 = -neg(centre);
    let fp = -neg(centre + step);
    let fm = -neg(centre - step);
    let d2 = (fp - 2.0 * f0 + fm) / (step * step);
    let sd_hurst = if d2 < 0.0 {
        dhurst_dh(h_hat) / (-d2).sqrt()
    } else {
        f64::NAN
    };
    debug_assert!(f_hat.is_finite());

    Ok(MleResult {
        hurst,
        h: h_hat,
        sigma,
        loglik,
        sd_hurst,
        iterations: evaluations.get(),
        model: model.kind(),
        boundary,
        mean,
    })
}

/// Settings for [`replication_study`].
#[derive(Debug, Clone)]
pub struct ReplicationOptions {
    pub hurst: f64,
    pub n: usize,
    pub replications: usize,
    /// Replication `i` simulates with seed `seed + i`.
    pub seed: u64,
    pub mle: MleOptions,
}

/// Per-approximation summary against the exact estimates.
#[derive(Debug, Clone)]
pub struct ApproxSummary {
    pub model: ModelKind,
    pub mean_estimate: f64,
    /// Root mean squared difference to the exact-model estimate.
    pub rmse: f64,
    /// Mean absolute difference to the exact-model estimate.
    pub mae: f64,
}

/// Estimates of one replication: exact first, then each approximation.
#[derive(Debug, Clone)]
pub struct ReplicationEstimates {
    pub index: usize,
    pub exact: f64,
    pub approx: Vec<f64>,
}

#[derive(Debug)]
pub struct ReplicationReport {
    pub hurst: f64,
    pub n: usize,
    pub replications: usize,
    pub exact_mean: f64,
    pub exact_sd: f64,
    pub approx: Vec<ApproxSummary>,
    pub estimates: Vec<ReplicationEstimates>,
    /// Failed replications; they are left out of every summary.
    pub failures: Vec<FgnError>,
}

/// Simulates exact fGn series and compares exact and approximate MLEs.
pub fn replication_study(opts: &ReplicationOptions, tables: &[Model]) -> Result<ReplicationReport> {
    if opts.replications == 0 {
        return Err(FgnError::Dimension("need at least one replication".into()));
    }
    let params = HurstParams::new(opts.hurst, 1.0)?;
    let outcomes: Vec<Result<ReplicationEstimates>> = (0..opts.replications)
        .into_par_iter()
        .map(|i| {
            let run = || -> Result<ReplicationEstimates> {
                let x = simulate_exact(&params, opts.n, opts.seed.wrapping_add(i as u64))?;
                let exact = mle(&x, Model::Exact, &opts.mle)?.hurst;
                let approx = tables
                    .iter()
                    .map(|&model| mle(&x, model, &opts.mle).map(|r| r.hurst))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ReplicationEstimates {
                    index: i,
                    exact,
                    approx,
                })
            };
            run().map_err(|e| FgnError::Replication {
                index: i,
                source: Box::new(e),
            })
        })
        .collect();

    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(e) => estimates.push(e),
            Err(e) => failures.push(e),
        }
    }
    let count = estimates.len() as f64;
    let (exact_mean, exact_sd) = if estimates.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let mean = estimates.iter().map(|e| e.exact).sum::<f64>() / count;
        let var = estimates.iter().map(|e| (e.exact - mean).powi(2)).sum::<f64>()
            / (count - 1.0).max(1.0);
        (mean, var.sqrt())
    };
    let approx = tables
        .iter()
        .enumerate()
        .map(|(j, model)| {
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut abs = 0.0;
            for e in &estimates {
                let diff = e.approx[j] - e.exact;
                sum += e.approx[j];
                sq += diff * diff;
                abs += diff.abs();
            }
            ApproxSummary {
                model: model.kind(),
                mean_estimate: sum / count,
                rmse: (sq / count).sqrt(),
                mae: abs / count,
            }
        })
        .collect();
    Ok(ReplicationReport {
        hurst: opts.hurst,
        n: opts.n,
        replications: opts.replications,
        exact_mean,
        exact_sd,
        approx,
        estimates,
        failures,
    })
}

/// Conditional mean and standard deviation of future values.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Predictor for `x_{n+1..n+p}` from `x_{1..n}`, prepared once for a given
/// model, parameters and sizes. The conditional standard deviations do not
/// depend on the data and are computed at construction.
#[derive(Debug, Clone)]
pub struct Predictor<'a> {
    model: Model<'a>,
    hurst: f64,
    sigma: f64,
    n: usize,
    horizon: usize,
    /// exact model: row `h` holds the weights of `x` in the mean of `x_{n+h+1}`
    weights: Vec<Vec<f64>>,
    sd: Vec<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(model: Model<'a>, hurst: f64, sigma: f64, n: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(FgnError::Dimension("prediction horizon must be at least 1".into()));
        }
        if n == 0 {
            return Err(FgnError::NoData);
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(domain("sigma", sigma, "(0, inf)"));
        }
        match model {
            Model::Exact => {
                // weights a_h = T^{-1} t_h with t_h the correlations of x_{n+h}
                // with x_1..x_n, and variance sigma^2 (1 - t_h^T a_h)
                let acf = fgn_acf(hurst, n + horizon)?;
                let inverse = trench_inverse(&acf, n)?;
                let r = acf.values();
                let mut weights = Vec::with_capacity(horizon);
                let mut sd = Vec::with_capacity(horizon);
                for h in 1..=horizon {
                    let t: Vec<f64> = (0..n).map(|i| r[n + h - 1 - i]).collect();
                    let a = inverse.matvec(&t);
                    let explained: f64 = t.iter().zip(&a).map(|(p, q)| p * q).sum();
                    sd.push(sigma * (1.0 - explained).max(0.0).sqrt());
                    weights.push(a);
                }
                Ok(Self {
                    model,
                    hurst,
                    sigma,
                    n,
                    horizon,
                    weights,
                    sd,
                })
            }
            Model::Approx { .. } => {
                let mut me = Self {
                    model,
                    hurst,
                    sigma,
                    n,
                    horizon,
                    weights: Vec::new(),
                    sd: Vec::new(),
                };
                me.sd = me.approx(&vec![0.0; n], true)?.sd;
                Ok(me)
            }
        }
    }

    fn approx(&self, x: &[f64], with_sd: bool) -> Result<Prediction> {
        let Model::Approx { table, kappa } = self.model else {
            unreachable!("approximate branch")
        };
        let mix = table.lookup(self.hurst)?;
        let q = assemble_precision(&mix, self.sigma, self.n + self.horizon, kappa)?;
        let obs = ObservationModel::exact(x.to_vec()).with_horizon(self.horizon);
        if with_sd {
            let post = condition(&q, &obs)?;
            Ok(Prediction {
                mean: post.x_mean()[self.n..].to_vec(),
                sd: post.x_sd()[self.n..].to_vec(),
            })
        } else {
            let post = solve_conditional(&q, &obs)?;
            let mean = (self.n..self.n + self.horizon)
                .map(|t| post.mean[q.x_index(t)])
                .collect();
            Ok(Prediction {
                mean,
                sd: self.sd.clone(),
            })
        }
    }

    pub fn sd(&self) -> &[f64] {
        &self.sd
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Conditional means at horizons `1..=p`.
    pub fn mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(FgnError::Dimension(format!(
                "predictor prepared for {} points, got {}",
                self.n,
                x.len()
            )));
        }
        match self.model {
            Model::Exact => Ok(self
                .weights
                .iter()
                .map(|a| a.iter().zip(x).map(|(w, v)| w * v).sum())
                .collect()),
            Model::Approx { .. } => Ok(self.approx(x, false)?.mean),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(Prediction {
            mean: self.mean(x)?,
            sd: self.sd.clone(),
        })
    }
}

/// Conditional mean and sd of `x_{n+1..n+p}` given `x`.
pub fn predict(x: &[f64], hurst: f64, sigma: f64, p: usize, model: Model) -> Result<Prediction> {
    Predictor::new(model, hurst, sigma, x.len(), p)?.predict(x)
}

/// Settings for [`prediction_error_study`].
#[derive(Debug, Clone)]
pub struct PredictionStudyOptions {
    pub hurst: f64,
    pub sigma: f64,
    pub n: usize,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PredictionReport {
    /// Horizons `1..=P`.
    pub horizons: Vec<usize>,
    /// Mean absolute difference of the candidate and reference conditional
    /// means, standardized by the reference conditional sd.
    pub err_mu: Vec<f64>,
    /// Ratio of candidate to reference conditional sd, minus one.
    pub err_sigma: Vec<f64>,
    /// Candidate conditional means, one vector per replication.
    pub means: Vec<Vec<f64>>,
}

/// Compares the predictions of `candidate` with those of `reference` on
/// series simulated from the exact model.
pub fn prediction_error_study(
    opts: &PredictionStudyOptions,
    reference: Model,
    candidate: Model,
) -> Result<PredictionReport> {
    if opts.replications == 0 {
        return Err(FgnError::Dimension("need at least one replication".into()));
    }
    let params = HurstParams::new(opts.hurst, opts.sigma)?;
    let truth = Predictor::new(reference, opts.hurst, opts.sigma, opts.n, opts.horizon)?;
    let approx = Predictor::new(candidate, opts.hurst, opts.sigma, opts.n, opts.horizon)?;
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.replications)
        .into_par_iter()
        .map(|i| {
            let x = simulate_exact(&params, opts.n, opts.seed.wrapping_add(i as u64))?;
            Ok((truth.mean(&x)?, approx.mean(&x)?))
        })
        .collect::<Result<_>>()?;
    let count = opts.replications as f64;
    let err_mu = (0..opts.horizon)
        .map(|h| {
            runs.iter()
                .map(|(mu, mu_tilde)| (mu_tilde[h] - mu[h]).abs() / truth.sd[h])
                .sum::<f64>()
                / count
        })
        .collect();
    let err_sigma = approx
        .sd
        .iter()
        .zip(&truth.sd)
        .map(|(s_tilde, s)| s_tilde / s - 1.0)
        .collect();
    Ok(PredictionReport {
        horizons: (1..=opts.horizon).collect(),
        err_mu,
        err_sigma,
        means: runs.into_iter().map(|(_, m)| m).collect(),
    })
}

/// `KL(N(0, p) || N(0, q))` by dense Cholesky.
pub fn kl_gaussian(p: &DenseMatrix, q: &DenseMatrix) -> Result<f64> {
    let n = p.dim();
    if q.dim() != n {
        return Err(FgnError::Dimension(format!("covariances of size {n} and {}", q.dim())));
    }
    let lp = p.cholesky()?;
    let lq = q.cholesky()?;
    // tr(q^{-1} p) = || Lq^{-1} Lp ||_F^2
    let lpf = lp.factor();
    let mut trace = 0.0;
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| lpf[(i, j)]).collect();
        let u = lq.forward(&col);
        trace += u.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(0.5 * (trace - n as f64 + lq.logdet() - lp.logdet()))
}

/// Kullback-Leibler divergence from the exact fGn of length `n` to the
/// approximate model (unit scale). `reverse` swaps the arguments.
pub fn kld(hurst: f64, n: usize, mix: &Ar1Mixture, kappa: f64, reverse: bool) -> Result<f64> {
    if n == 0 || n > 4000 {
        return Err(FgnError::Dimension(format!("kld needs 1 <= n <= 4000, got {n}")));
    }
    let exact = Model::Exact.covariance(hurst, n)?;
    let approx = approx_covariance(mix, n, kappa)?;
    if reverse {
        kl_gaussian(&approx, &exact)
    } else {
        kl_gaussian(&exact, &approx)
    }
}

/// Posterior split of the data into weighted AR(1) components.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub hurst: f64,
    pub sigma: f64,
    /// Subtracted from the data before conditioning.
    pub offset: f64,
    pub mixture: Ar1Mixture,
    /// Posterior means of `sigma sqrt(w_j) z_j`, ordered by decreasing phi.
    pub component_means: Vec<Vec<f64>>,
    pub component_sds: Vec<Vec<f64>>,
    /// Posterior mean of the augmentation noise `sigma e`.
    pub noise_mean: Vec<f64>,
    /// Posterior mean of the latent series.
    pub x_mean: Vec<f64>,
}

impl Decomposition {
    /// Largest absolute gap between the component sum plus noise and the
    /// latent posterior mean.
    pub fn reconstruction_residual(&self) -> f64 {
        (0..self.x_mean.len())
            .map(|t| {
                let sum: f64 = self.component_means.iter().map(|c| c[t]).sum::<f64>() + self.noise_mean[t];
                (sum - self.x_mean[t]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Conditions the augmented field on `obs` (with `fit.mean` subtracted from
/// the data) at the fitted `(H, sigma)`.
pub fn decompose(
    obs: &ObservationModel,
    fit: &MleResult,
    table: &CoeffTable,
    kappa: f64,
) -> Result<Decomposition> {
    let mix = table.lookup(fit.hurst)?;
    let centred: Vec<f64> = obs.y().iter().map(|v| v - fit.mean).collect();
    let shifted = ObservationModel::new(centred, obs.precision().to_vec(), obs.horizon())?;
    let q = assemble_precision(&mix, fit.sigma, shifted.total_len(), kappa)?;
    let post = condition(&q, &shifted)?;
    let x_mean = post.x_mean();
    let scale: Vec<f64> = mix.weights().iter().map(|w| fit.sigma * w.sqrt()).collect();
    let component_means: Vec<Vec<f64>> = (0..mix.m())
        .map(|j| post.z_mean(j).into_iter().map(|v| scale[j] * v).collect())
        .collect();
    let component_sds = (0..mix.m())
        .map(|j| post.z_sd(j).into_iter().map(|v| scale[j] * v).collect())
        .collect();
    let noise_mean = (0..x_mean.len())
        .map(|t| x_mean[t] - component_means.iter().map(|c| c[t]).sum::<f64>())
        .collect();
    Ok(Decomposition {
        hurst: fit.hurst,
        sigma: fit.sigma,
        offset: fit.mean,
        mixture: mix,
        component_means,
        component_sds,
        noise_mean,
        x_mean,
    })
}

/// Lag-`k` sample autocorrelation (mean removed).
pub fn sample_autocorrelation(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n.saturating_sub(k)).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar1_fit::{FitParams, TableEntry};
    use crate::dense::DenseMatrix;

    fn mix4() -> Ar1Mixture {
        Ar1Mixture::new(0.8, vec![0.1, 0.15, 0.25, 0.5], vec![0.999, 0.98, 0.85, 0.3]).unwrap()
    }

    fn series(n: usize, seed: u64) -> Vec<f64> {
        simulate_exact(&HurstParams::new(0.8, 1.3).unwrap(), n, seed).unwrap()
    }

    #[test]
    fn log_two_pi_constant() {
        assert!((LN_2PI - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn approx_loglik_matches_dense_density() {
        let x = series(60, 3);
        let kappa = 1e4;
        let ll = loglik_approx_mixture(&x, &mix4(), 1.3, kappa).unwrap();
        let mut cov = approx_covariance(&mix4(), 60, kappa).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                cov[(i, j)] *= 1.69;
            }
        }
        let dense = cov.cholesky().unwrap().gaussian_logpdf(&x);
        assert!((ll - dense).abs() < 1e-9, "{ll} vs {dense}");
    }

    #[test]
    fn explicit_sigma_and_profiled_paths_agree() {
        let x = series(80, 5);
        for &sigma in &[0.3, 1.0, 2.7] {
            let a = loglik_approx_mixture(&x, &mix4(), sigma, default_kappa()).unwrap();
            let b = loglik_approx_profiled(&x, &mix4(), sigma, default_kappa()).unwrap();
            assert!((a - b).abs() < 1e-7, "sigma {sigma}: {a} vs {b}");
        }
    }

    #[test]
    fn scale_family() {
        let x = series(50, 9);
        let c: f64 = 3.5;
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let a = loglik_approx_profiled(&cx, &mix4(), c * 1.1, default_kappa()).unwrap();
        let b = loglik_approx_profiled(&x, &mix4(), 1.1, default_kappa()).unwrap();
        assert!((a - (b - 50.0 * c.ln())).abs() < 1e-8);
    }

    #[test]
    fn two_point_exact_prediction() {
        // x_3 | (x_1, x_2): bivariate conditioning on the 2x2 Toeplitz block
        let hurst = 0.75;
        let r = fgn_acf(hurst, 2).unwrap().values().to_vec();
        let x = [0.4, -1.1];
        let p = predict(&x, hurst, 2.0, 1, Model::Exact).unwrap();
        let det = 1.0 - r[1] * r[1];
        let a = [(r[2] - r[1] * r[1]) / det, (r[1] - r[1] * r[2]) / det];
        let mean = a[0] * x[0] + a[1] * x[1];
        let var = 4.0 * (1.0 - (a[0] * r[2] + a[1] * r[1]));
        assert!((p.mean[0] - mean).abs() < 1e-12);
        assert!((p.sd[0] - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn white_noise_prediction_is_uninformative() {
        let x = series(30, 1);
        let p = predict(&x, 0.5, 1.7, 4, Model::Exact).unwrap();
        assert!(p.mean.iter().all(|m| m.abs() < 1e-12));
        assert!(p.sd.iter().all(|s| (s - 1.7).abs() < 1e-12));
    }

    #[test]
    fn kl_self_comparison_is_zero() {
        let cov = Model::Exact.covariance(0.8, 40).unwrap();
        assert!(kl_gaussian(&cov, &cov).unwrap().abs() < 1e-10);
        let id = DenseMatrix::identity(3);
        let two = DenseMatrix::from_fn(3, |i, j| if i == j { 2.0 } else { 0.0 });
        // 0.5 * (3/2 - 3 + 3 ln 2)
        let expected = 0.5 * (1.5 - 3.0 + 3.0 * 2f64.ln());
        assert!((kl_gaussian(&id, &two).unwrap() - expected).abs() < 1e-14);
    }

    fn tiny_table() -> CoeffTable {
        // two-component table with hand-made entries, enough for plumbing tests
        let entries = (0..11)
            .map(|i| {
                let hurst = 0.51 + 0.048 * i as f64;
                let mix = Ar1Mixture::new(hurst, vec![0.3, 0.7], vec![0.9, 0.2 + 0.02 * i as f64]).unwrap();
                TableEntry {
                    h: h_from_hurst(hurst),
                    params: FitParams::from_mixture(&mix),
                    objective: 0.0,
                }
            })
            .collect();
        CoeffTable::from_entries(2, 1000, entries).unwrap()
    }

    #[test]
    fn mle_flags_and_validates() {
        let table = tiny_table();
        let x = series(15, 2);
        assert!(mle(&x, Model::Exact, &MleOptions::default()).is_err());
        let zeros = vec![0.0; 40];
        assert!(matches!(
            mle(&zeros, Model::approx(&table), &MleOptions::default()),
            Err(FgnError::Degenerate(_))
        ));
        let constant = vec![3.0; 40];
        assert!(matches!(
            mle(&constant, Model::Exact, &MleOptions::default()),
            Err(FgnError::Degenerate(_))
        ));
    }

    #[test]
    fn mle_recovers_strong_memory_roughly() {
        let x = simulate_exact(&HurstParams::new(0.85, 2.0).unwrap(), 1000, 17).unwrap();
        let fit = mle(&x, Model::Exact, &MleOptions::default()).unwrap();
        assert!((fit.hurst - 0.85).abs() < 0.06, "{}", fit.hurst);
        assert!((fit.sigma - 2.0).abs() < 0.5);
        assert!(fit.sd_hurst > 0.0 && fit.sd_hurst < 0.1);
        assert!(!fit.boundary);
        assert_eq!(fit.model, ModelKind::Exact);
    }

    #[test]
    fn decomposition_sums_to_latent_mean() {
        let table = tiny_table();
        let x = series(40, 4);
        let fit = mle(&x, Model::approx(&table), &MleOptions::default()).unwrap();
        let d = decompose(&ObservationModel::exact(x.clone()), &fit, &table, default_kappa()).unwrap();
        assert_eq!(d.component_means.len(), 2);
        assert!(d.reconstruction_residual() < 1e-12);
        for (t, v) in d.x_mean.iter().enumerate() {
            assert!((v + fit.mean - x[t]).abs() < 1e-12);
        }
    }
}
