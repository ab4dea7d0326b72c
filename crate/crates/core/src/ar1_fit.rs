//! Fitting weighted sums of AR(1) processes to the fGn autocorrelation.
//!
//! A mixture `x = sigma * sum_j sqrt(w_j) z_j` of independent unit-variance
//! AR(1) processes has autocorrelation `sum_j w_j phi_j^k`. For each H the
//! weights and coefficients minimize
//!
//! ```text
//! sum_{k=1}^{K} (1/k) (sum_j w_j phi_j^k - gamma_H(k))^2
//! ```
//!
//! in the unconstrained coordinates `(v, u)`:
//! `w_j = exp(v_j) / sum_i exp(v_i)` with `v_1 = 0`, and
//! `phi_j = 1 / (1 + sum_{i<=j} exp(-u_i))`, which keeps the weights on the
//! simplex and the coefficients strictly decreasing in `(0, 1)`.
//!
//! A [`CoeffTable`] stores fits on a grid of H and interpolates each
//! `(v, u)` coordinate with a natural cubic spline in `h = logit(2H - 1)`.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{domain, FgnError, Result};
use crate::fgn_exact::{fgn_acf, AcfVector};
use crate::hurst::{h_from_hurst, hurst_from_h};
use crate::optim::{bfgs, nelder_mead, BfgsOptions, NelderMeadOptions};
use crate::spline::NaturalCubicSpline;

/// Maximum lag used in the fit unless configured otherwise.
pub const DEFAULT_KMAX: usize = 1000;
/// Largest supported component count.
pub const MAX_COMPONENTS: usize = 8;
/// Default H range of the coefficient grid.
pub const DEFAULT_HURST_RANGE: (f64, f64) = (0.51, 0.99);
pub const DEFAULT_GRID_SIZE: usize = 101;

/// Weights and AR(1) coefficients of an `m`-component mixture for one H.
#[derive(Debug, Clone, PartialEq)]
pub struct Ar1Mixture {
    hurst: f64,
    weights: Vec<f64>,
    coefficients: Vec<f64>,
}

impl Ar1Mixture {
    pub fn new(hurst: f64, weights: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        if m == 0 || m != coefficients.len() {
            return Err(FgnError::Dimension(format!(
                "{} weights and {} coefficients",
                m,
                coefficients.len()
            )));
        }
        if let Some(&w) = weights.iter().find(|&&w| !(w > 0.0)) {
            return Err(domain("weight", w, "(0, 1]"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(domain("sum of weights", total, "{1}"));
        }
        if !(coefficients[0] < 1.0) || !(coefficients[m - 1] > 0.0) {
            return Err(domain("AR(1) coefficient", coefficients[0], "(0, 1)"));
        }
        if coefficients.windows(2).any(|c| !(c[0] > c[1])) {
            return Err(FgnError::Dimension(
                "AR(1) coefficients must be strictly decreasing".into(),
            ));
        }
        Ok(Self {
            hurst,
            weights,
            coefficients,
        })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Autocorrelation at lags `0..=max_lag`.
    pub fn acf(&self, max_lag: usize) -> AcfVector {
        let mut values = vec![0.0; max_lag + 1];
        for (&w, &phi) in self.weights.iter().zip(&self.coefficients) {
            let mut power = 1.0;
            for v in values.iter_mut() {
                *v += w * power;
                power *= phi;
            }
        }
        // normalization is exact up to rounding of the weights
        values[0] = 1.0;
        AcfVector::from_values(values, self.hurst).expect("unit lag-zero value")
    }
}

/// Mixture autocorrelation `sum_j w_j phi_j^k` for `k = 0..=max_lag`.
pub fn mixture_acf(mix: &Ar1Mixture, max_lag: usize) -> AcfVector {
    mix.acf(max_lag)
}

/// Unconstrained fit coordinates: `v` (with `v_1 = 0`) and `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    v: Vec<f64>,
    u: Vec<f64>,
}

impl FitParams {
    /// `v_tail` holds `v_2..v_m`.
    pub fn new(v_tail: &[f64], u: &[f64]) -> Result<Self> {
        if u.is_empty() || v_tail.len() + 1 != u.len() {
            return Err(FgnError::Dimension(format!(
                "expected m-1 = {} free weights for m = {} coefficients, got {}",
                u.len().saturating_sub(1),
                u.len(),
                v_tail.len()
            )));
        }
        let mut v = Vec::with_capacity(u.len());
        v.push(0.0);
        v.extend_from_slice(v_tail);
        Ok(Self { v, u: u.to_vec() })
    }

    /// Unpacks `[v_2..v_m, u_1..u_m]`.
    pub fn from_packed(packed: &[f64], m: usize) -> Result<Self> {
        if m == 0 || packed.len() != 2 * m - 1 {
            return Err(FgnError::Dimension(format!(
                "packed vector of length {} does not fit m = {m}",
                packed.len()
            )));
        }
        Self::new(&packed[..m - 1], &packed[m - 1..])
    }

    /// Inverse of [`FitParams::to_mixture`].
    pub fn from_mixture(mix: &Ar1Mixture) -> Self {
        let w = mix.weights();
        let v: Vec<f64> = w.iter().map(|wj| (wj / w[0]).ln()).collect();
        let mut u = Vec::with_capacity(mix.m());
        let mut prev = 0.0;
        for &phi in mix.coefficients() {
            let s = 1.0 / phi - 1.0;
            u.push(-(s - prev).ln());
            prev = s;
        }
        Self { v, u }
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn packed(&self) -> Vec<f64> {
        let mut p = self.v[1..].to_vec();
        p.extend_from_slice(&self.u);
        p
    }

    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.v)
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut s = 0.0;
        self.u
            .iter()
            .map(|&ui| {
                s += (-ui).exp();
                1.0 / (1.0 + s)
            })
            .collect()
    }

    pub fn to_mixture(&self, hurst: f64) -> Result<Ar1Mixture> {
        Ar1Mixture::new(hurst, self.weights(), self.coefficients())
    }

    /// Appends a negligible extra component, giving a start for `m + 1`
    /// whose objective equals this fit's to within rounding.
    pub fn embed(&self) -> FitParams {
        let mut v = self.v.clone();
        v.push(-40.0);
        let mut u = self.u.clone();
        u.push(0.0);
        FitParams { v, u }
    }

    /// Default starting point spreading the coefficients between 0.998
    /// and 0.3 on a log scale of `1 - phi`.
    pub fn heuristic(m: usize) -> FitParams {
        let coeffs: Vec<f64> = if m == 1 {
            vec![0.5]
        } else {
            let (lo, hi) = (0.002f64.ln(), 0.7f64.ln());
            (0..m)
                .map(|j| {
                    let t = j as f64 / (m - 1) as f64;
                    1.0 - (lo + t * (hi - lo)).exp()
                })
                .collect()
        };
        let total = (m * (m + 1) / 2) as f64;
        let weights = (1..=m).map(|j| j as f64 / total).collect();
        let mix = Ar1Mixture::new(0.75, weights, coeffs).expect("valid heuristic start");
        FitParams::from_mixture(&mix)
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - top).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Weighted least-squares distance between a mixture ACF and the fGn ACF.
#[derive(Debug, Clone)]
pub struct AcfFitProblem {
    hurst: f64,
    m: usize,
    /// fGn autocorrelation at lags `1..=K`.
    target: Vec<f64>,
}

impl AcfFitProblem {
    pub fn new(hurst: f64, m: usize, k_max: usize) -> Result<Self> {
        if !(hurst >= 0.5 && hurst < 1.0) {
            return Err(domain("H", hurst, "[0.5, 1)"));
        }
        if m == 0 || m > MAX_COMPONENTS {
            return Err(domain("m", m as f64, "[1, 8]"));
        }
        if k_max == 0 {
            return Err(domain("k_max", 0.0, "[1, inf)"));
        }
        let acf = fgn_acf(hurst, k_max)?;
        Ok(Self {
            hurst,
            m,
            target: acf.values()[1..].to_vec(),
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        2 * self.m - 1
    }

    pub fn value(&self, packed: &[f64]) -> f64 {
        let mut scratch = vec![0.0; packed.len()];
        self.value_and_gradient(packed, &mut scratch)
    }

    /// Objective and its gradient in packed `(v_2..v_m, u_1..u_m)` coordinates.
    pub fn value_and_gradient(&self, packed: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.m;
        let mut v = Vec::with_capacity(m);
        v.push(0.0);
        v.extend_from_slice(&packed[..m - 1]);
        let u = &packed[m - 1..];
        let w = softmax(&v);
        let exp_neg_u: Vec<f64> = u.iter().map(|x| (-x).exp()).collect();
        let mut s = 0.0;
        let phi: Vec<f64> = exp_neg_u
            .iter()
            .map(|e| {
                s += e;
                1.0 / (1.0 + s)
            })
            .collect();

        let mut power = vec![1.0; m];
        let mut grad_w = vec![0.0; m];
        let mut grad_phi = vec![0.0; m];
        let mut f = 0.0;
        for (i, &g) in self.target.iter().enumerate() {
            let inv_k = 1.0 / (i + 1) as f64;
            let mut fit = 0.0;
            // power holds phi^(k-1) on entry
            for j in 0..m {
                fit += w[j] * power[j] * phi[j];
            }
            let r = fit - g;
            f += inv_k * r * r;
            for j in 0..m {
                let prev = power[j];
                power[j] *= phi[j];
                grad_w[j] += 2.0 * inv_k * r * power[j];
                // d(phi^k)/dphi = k phi^(k-1), the k cancels the 1/k weight
                grad_phi[j] += 2.0 * r * w[j] * prev;
            }
        }
        if !f.is_finite() {
            return f64::INFINITY;
        }
        let mean_grad_w: f64 = w.iter().zip(&grad_w).map(|(a, b)| a * b).sum();
        for l in 1..m {
            grad[l - 1] = w[l] * (grad_w[l] - mean_grad_w);
        }
        // dphi_j/du_i = phi_j^2 exp(-u_i) for i <= j
        let mut tail = 0.0;
        for i in (0..m).rev() {
            tail += phi[i] * phi[i] * grad_phi[i];
            grad[m - 1 + i] = exp_neg_u[i] * tail;
        }
        f
    }
}

/// Value of the fit objective at `params` for the given H and maximum lag.
pub fn fit_objective(params: &FitParams, hurst: f64, k_max: usize) -> Result<f64> {
    let problem = AcfFitProblem::new(hurst, params.m(), k_max)?;
    Ok(problem.value(&params.packed()))
}

/// Multi-start policy for [`fit_single_with`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Random perturbations of the best deterministic start.
    pub restarts: usize,
    pub perturbation_sd: f64,
    pub seed: u64,
    /// Additional deterministic starts (e.g. an embedded smaller fit).
    pub extra_starts: Vec<FitParams>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            perturbation_sd: 1.0,
            seed: 0x5eed,
            extra_starts: Vec::new(),
        }
    }
}

/// Outcome of fitting one H.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: FitParams,
    pub mixture: Ar1Mixture,
    pub objective: f64,
    /// Objective reached from each start, in start order.
    pub start_objectives: Vec<f64>,
}

/// Fits an `m`-component mixture at `hurst` with the default multi-start
/// policy, optionally warm-started.
pub fn fit_single(
    hurst: f64,
    m: usize,
    k_max: usize,
    warm_start: Option<&FitParams>,
) -> Result<FitResult> {
    fit_single_with(hurst, m, k_max, warm_start, &FitOptions::default())
}

pub fn fit_single_with(
    hurst: f64,
    m: usize,
    k_max: usize,
    warm_start: Option<&FitParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !(hurst > 0.5) {
        return Err(domain("H", hurst, "(0.5, 1)"));
    }
    let problem = AcfFitProblem::new(hurst, m, k_max)?;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm_start {
        if w.m() != m {
            return Err(FgnError::Dimension(format!(
                "warm start has {} components, fitting {m}",
                w.m()
            )));
        }
        starts.push(w.packed());
    }
    starts.push(FitParams::heuristic(m).packed());
    for extra in &opts.extra_starts {
        if extra.m() == m {
            starts.push(extra.packed());
        }
    }
    let base = starts
        .iter()
        .min_by(|a, b| problem.value(a).total_cmp(&problem.value(b)))
        .cloned()
        .expect("at least one start");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.perturbation_sd.max(1e-12)).expect("positive sd");
    for _ in 0..opts.restarts {
        starts.push(base.iter().map(|x| x + noise.sample(&mut rng)).collect());
    }

    let runs: Vec<(Vec<f64>, f64, bool)> = starts
        .par_iter()
        .map(|x0| minimize_from(&problem, x0))
        .collect();
    let start_objectives: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (best_x, best_f, converged) = runs
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one run");
    if let Some(w) = warm_start {
        // never report worse than the warm start
        debug_assert!(best_f <= problem.value(&w.packed()) + 1e-18);
    }
    if !converged || !best_f.is_finite() {
        return Err(FgnError::NoConvergence {
            iterations: BfgsOptions::default().max_iter,
            objective: best_f,
            best: best_x,
        });
    }
    let params = FitParams::from_packed(&best_x, m)?;
    let mixture = params.to_mixture(hurst)?;
    Ok(FitResult {
        params,
        mixture,
        objective: best_f,
        start_objectives,
    })
}

fn minimize_from(problem: &AcfFitProblem, x0: &[f64]) -> (Vec<f64>, f64, bool) {
    let fg = |x: &[f64], g: &mut [f64]| problem.value_and_gradient(x, g);
    let first = bfgs(fg, x0, BfgsOptions::default());
    if first.converged {
        return (first.x, first.value, true);
    }
    // fallback: simplex from the best point, then a final quasi-Newton pass
    let simplex = nelder_mead(|x| problem.value(x), &first.x, NelderMeadOptions::default());
    let second = bfgs(fg, &simplex.x, BfgsOptions::default());
    let converged = second.converged || simplex.converged;
    if second.value <= simplex.value {
        (second.x, second.value, converged)
    } else {
        (simplex.x, simplex.value, converged)
    }
}

/// One grid point of a coefficient table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub h: f64,
    pub params: FitParams,
    pub objective: f64,
}

impl TableEntry {
    pub fn hurst(&self) -> f64 {
        hurst_from_h(self.h)
    }
}

/// Options for [`build_table_with`].
#[derive(Debug, Clone)]
pub struct TableOptions {
    pub hurst_range: (f64, f64),
    pub fit: FitOptions,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            hurst_range: DEFAULT_HURST_RANGE,
            fit: FitOptions::default(),
        }
    }
}

/// Fitted mixtures on a grid of H with spline interpolation in between.
#[derive(Debug, Clone)]
pub struct CoeffTable {
    m: usize,
    k_max: usize,
    entries: Vec<TableEntry>,
    splines: Vec<NaturalCubicSpline>,
}

const TABLE_MAGIC: &str = "fgn-coeff-table v1";

impl CoeffTable {
    pub fn from_entries(m: usize, k_max: usize, entries: Vec<TableEntry>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(FgnError::Dimension("table needs at least two grid points".into()));
        }
        if entries.iter().any(|e| e.params.m() != m) {
            return Err(FgnError::Dimension(format!(
                "table entries must all have m = {m}"
            )));
        }
        let h: Vec<f64> = entries.iter().map(|e| e.h).collect();
        let splines = (0..2 * m - 1)
            .map(|c| {
                let y = entries.iter().map(|e| e.params.packed()[c]).collect();
                NaturalCubicSpline::new(h.clone(), y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            m,
            k_max,
            entries,
            splines,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    /// Inclusive H range covered by the grid.
    pub fn hurst_range(&self) -> (f64, f64) {
        (
            self.entries[0].hurst(),
            self.entries[self.entries.len() - 1].hurst(),
        )
    }

    /// Interpolated fit coordinates at `h`, without range checks.
    pub fn params_at_h(&self, h: f64) -> FitParams {
        let packed: Vec<f64> = self.splines.iter().map(|s| s.eval(h)).collect();
        FitParams::from_packed(&packed, self.m).expect("spline count matches m")
    }

    /// Mixture for `hurst`, which must lie inside the grid range.
    pub fn lookup(&self, hurst: f64) -> Result<Ar1Mixture> {
        let (lo, hi) = self.hurst_range();
        if !(hurst >= lo - 1e-12 && hurst <= hi + 1e-12) {
            return Err(FgnError::Domain {
                name: "H",
                value: hurst,
                range: "inside the coefficient table grid",
            });
        }
        let h = h_from_hurst(hurst).clamp(self.entries[0].h, self.entries[self.entries.len() - 1].h);
        self.params_at_h(h).to_mixture(hurst)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{TABLE_MAGIC} m={} kmax={} grid={}",
            self.m,
            self.k_max,
            self.entries.len()
        )?;
        for e in &self.entries {
            let mut fields = vec![format!("{:.16e}", e.h)];
            fields.extend(e.params.packed().iter().map(|x| format!("{x:.16e}")));
            fields.push(format!("{:.16e}", e.objective));
            writeln!(out, "{}", fields.join(" "))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(FgnError::Parse {
            line: 1,
            message: "empty table".into(),
        })?;
        let header = header?;
        let (m, k_max, grid) = parse_header(&header)?;
        let mut entries = Vec::with_capacity(grid);
        for (idx, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| FgnError::Parse {
                        line: lineno,
                        message: format!("bad number {f:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if fields.len() != 2 * m + 1 {
                return Err(FgnError::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", 2 * m + 1, fields.len()),
                });
            }
            let params = FitParams::from_packed(&fields[1..2 * m], m)?;
            if let Some(prev) = entries.last() {
                let prev: &TableEntry = prev;
                if !(fields[0] > prev.h) {
                    return Err(FgnError::Parse {
                        line: lineno,
                        message: "grid must be strictly increasing in h".into(),
                    });
                }
            }
            entries.push(TableEntry {
                h: fields[0],
                params,
                objective: fields[2 * m],
            });
        }
        if entries.len() != grid {
            return Err(FgnError::Parse {
                line: entries.len() + 1,
                message: format!("header announces {grid} grid lines, found {}", entries.len()),
            });
        }
        Self::from_entries(m, k_max, entries)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Tables shipped with the crate (m = 3 and m = 4, k_max = 1000,
    /// 101 grid points on H in [0.51, 0.99]).
    pub fn builtin(m: usize) -> Result<Self> {
        let text = match m {
            3 => include_str!("../data/coeffs_m3.txt"),
            4 => include_str!("../data/coeffs_m4.txt"),
            _ => return Err(domain("m", m as f64, "{3, 4} for the shipped tables")),
        };
        Self::parse(text)
    }
}

fn parse_header(header: &str) -> Result<(usize, usize, usize)> {
    let bad = |message: String| FgnError::Parse { line: 1, message };
    let rest = header
        .strip_prefix(TABLE_MAGIC)
        .ok_or_else(|| bad(format!("expected header starting with {TABLE_MAGIC:?}")))?;
    let (mut m, mut k_max, mut grid) = (None, None, None);
    for field in rest.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field {field:?}")))?;
        let value: usize = value
            .parse()
            .map_err(|e| bad(format!("bad value in {field:?}: {e}")))?;
        match key {
            "m" => m = Some(value),
            "kmax" => k_max = Some(value),
            "grid" => grid = Some(value),
            _ => return Err(bad(format!("unknown header field {key:?}"))),
        }
    }
    match (m, k_max, grid) {
        (Some(m), Some(k), Some(g)) if (1..=MAX_COMPONENTS).contains(&m) => Ok((m, k, g)),
        _ => Err(bad("header needs m in [1, 8], kmax and grid".into())),
    }
}

/// Fits a table on `grid_size` equally spaced H values in the default range.
pub fn build_table(m: usize, k_max: usize, grid_size: usize) -> Result<CoeffTable> {
    build_table_with(m, k_max, grid_size, &TableOptions::default(), None)
}

/// Fits a table by continuation along increasing H, each point warm-started
/// from its predecessor. When `nested` holds an `m - 1` table, its fit at the
/// same grid point is embedded as an extra start, so the richer family never
/// reports a worse optimum.
pub fn build_table_with(
    m: usize,
    k_max: usize,
    grid_size: usize,
    opts: &TableOptions,
    nested: Option<&CoeffTable>,
) -> Result<CoeffTable> {
    if grid_size < 11 {
        return Err(domain("grid size", grid_size as f64, "[11, inf)"));
    }
    let (lo, hi) = opts.hurst_range;
    if !(lo > 0.5 && hi < 1.0 && lo < hi) {
        return Err(domain("H range", lo, "0.5 < lo < hi < 1"));
    }
    let mut entries: Vec<TableEntry> = Vec::with_capacity(grid_size);
    let mut warm: Option<FitParams> = None;
    for i in 0..grid_size {
        let hurst = lo + (hi - lo) * i as f64 / (grid_size - 1) as f64;
        let h = h_from_hurst(hurst);
        let mut fit_opts = opts.fit.clone();
        fit_opts.seed = opts.fit.seed.wrapping_add(i as u64);
        if let Some(smaller) = nested.filter(|t| t.m() + 1 == m) {
            fit_opts.extra_starts.push(smaller.params_at_h(h).embed());
        }
        let fit = fit_single_with(hurst, m, k_max, warm.as_ref(), &fit_opts).map_err(|e| {
            FgnError::GridFit {
                index: i,
                hurst,
                source: Box::new(e),
            }
        })?;
        warm = Some(fit.params.clone());
        entries.push(TableEntry {
            h,
            params: fit.params,
            objective: fit.objective,
        });
    }
    CoeffTable::from_entries(m, k_max, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_geometric_component() {
        let mix = Ar1Mixture::new(0.7, vec![1.0], vec![0.5]).unwrap();
        assert!((mixture_acf(&mix, 3).values()[3] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn two_component_acf_by_hand() {
        let mix = Ar1Mixture::new(0.7, vec![0.3, 0.7], vec![0.9, 0.2]).unwrap();
        let acf = mixture_acf(&mix, 2);
        assert_eq!(acf.values()[0], 1.0);
        assert!((acf.values()[2] - 0.271).abs() < 1e-15);
    }

    #[test]
    fn mixture_validation() {
        assert!(Ar1Mixture::new(0.7, vec![0.5, 0.6], vec![0.9, 0.2]).is_err());
        assert!(Ar1Mixture::new(0.7, vec![0.5, 0.5], vec![0.2, 0.9]).is_err());
        assert!(Ar1Mixture::new(0.7, vec![0.5, 0.5], vec![1.0, 0.9]).is_err());
        assert!(Ar1Mixture::new(0.7, vec![1.0], vec![0.0]).is_err());
        assert!(Ar1Mixture::new(0.7, vec![], vec![]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let problem = AcfFitProblem::new(0.83, 4, 300).unwrap();
        let x = [0.3, 0.9, 1.6, 5.5, 3.0, 0.4, -0.2];
        let mut g = [0.0; 7];
        problem.value_and_gradient(&x, &mut g);
        for i in 0..7 {
            let eps = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (problem.value(&xp) - problem.value(&xm)) / (2.0 * eps);
            assert!(
                (fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()),
                "component {i}: fd {fd} analytic {}",
                g[i]
            );
        }
    }

    #[test]
    fn objective_vanishes_for_white_noise_limit() {
        // H close to 1/2 with one nearly independent component
        let tiny = FitParams::from_mixture(&Ar1Mixture::new(0.5, vec![1.0], vec![1e-9]).unwrap());
        let near_half = fit_objective(&tiny, 0.500_000_1, 200).unwrap();
        assert!(near_half < 1e-12);
    }

    #[test]
    fn objective_is_zero_for_identical_acf() {
        // a target built from the mixture itself
        let mix = Ar1Mixture::new(0.8, vec![0.4, 0.6], vec![0.95, 0.3]).unwrap();
        let params = FitParams::from_mixture(&mix);
        let acf = mix.acf(50);
        let problem = AcfFitProblem {
            hurst: 0.8,
            m: 2,
            target: acf.values()[1..].to_vec(),
        };
        assert!(problem.value(&params.packed()) < 1e-30);
    }

    #[test]
    fn embedding_preserves_objective() {
        let fit3 = fit_single(0.8, 3, 200, None).unwrap();
        let embedded = fit3.params.embed();
        let f4 = fit_objective(&embedded, 0.8, 200).unwrap();
        assert!((f4 - fit3.objective).abs() < 1e-14);
    }

    #[test]
    fn fit_single_orders_coefficients_and_respects_warm_start() {
        let warm = FitParams::heuristic(4);
        let f_warm = fit_objective(&warm, 0.7, 300).unwrap();
        let fit = fit_single(0.7, 4, 300, Some(&warm)).unwrap();
        assert!(fit.objective <= f_warm);
        let phi = fit.mixture.coefficients();
        assert!(phi.windows(2).all(|p| p[0] > p[1]));
        assert!(fit.params.v()[0] == 0.0);
    }

    #[test]
    fn fit_rejects_domain() {
        assert!(fit_single(0.5, 4, 100, None).is_err());
        assert!(fit_single(0.7, 0, 100, None).is_err());
        assert!(fit_single(0.7, 9, 100, None).is_err());
        let wrong = FitParams::heuristic(3);
        assert!(fit_single(0.7, 4, 100, Some(&wrong)).is_err());
    }

    #[test]
    fn table_text_round_trip_and_lookup() {
        let opts = TableOptions {
            hurst_range: (0.6, 0.9),
            fit: FitOptions {
                restarts: 1,
                ..FitOptions::default()
            },
        };
        let table = build_table_with(2, 100, 11, &opts, None).unwrap();
        let text = table.to_text();
        assert!(text.starts_with("fgn-coeff-table v1 m=2 kmax=100 grid=11\n"));
        let back = CoeffTable::parse(&text).unwrap();
        assert_eq!(back.entries(), table.entries());
        for e in back.entries() {
            let at = back.params_at_h(e.h);
            for (a, b) in at.packed().iter().zip(e.params.packed()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!(back.lookup(0.59).is_err());
        assert!(back.lookup(0.91).is_err());
        assert!(back.lookup(0.6).is_ok());
        assert!(back.lookup(0.9).is_ok());
    }

    #[test]
    fn table_parse_errors_carry_line_numbers() {
        let bad = "fgn-coeff-table v1 m=1 kmax=10 grid=2\n0.1 0.2 0.3\n0.0 0.1\n";
        match CoeffTable::parse(bad) {
            Err(FgnError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(CoeffTable::parse("nonsense").is_err());
        let short = "fgn-coeff-table v1 m=1 kmax=10 grid=3\n0.1 0.2 0.3\n0.2 0.1 0.3\n";
        assert!(CoeffTable::parse(short).is_err());
    }

    #[test]
    fn grid_too_small_is_rejected() {
        assert!(build_table(2, 100, 10).is_err());
    }
}
