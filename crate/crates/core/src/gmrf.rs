//! Banded Gaussian Markov random field representation of the AR(1) mixture.
//!
//! The approximate model stacks the observed sum `x_t` and the `m` latent
//! AR(1) states `z_{j,t}` of each time point next to each other:
//! `(x_1, z_{1,1}, .., z_{m,1}, x_2, z_{1,2}, ..)`. In this ordering the joint
//! precision is a band matrix of dimension `(m+1) n` and bandwidth `m+1`, and
//! so is its Cholesky factor. Factorization, solves, marginal variances and
//! conditioning on noisy, missing or exact observations all cost O(n).
//!
//! Flop convention: one multiply-add in the innermost elimination loop of
//! the factorization counts as one flop. Square roots, divisions and the
//! solves are not counted.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ar1_fit::Ar1Mixture;
use crate::dense::DenseMatrix;
use crate::error::{domain, FgnError, Result};
use crate::observation::ObservationModel;

/// Default precision of the augmentation noise, `exp(15)`.
pub fn default_kappa() -> f64 {
    15f64.exp()
}

/// Symmetric band matrix stored by diagonals: `diags[k][j] = A[j+k][j]`.
///
/// Every diagonal holds `dim` slots, the last `k` of diagonal `k` unused, so
/// storage is exactly `(bandwidth + 1) * dim` reals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    dim: usize,
    bandwidth: usize,
    diags: Vec<Vec<f64>>,
}

impl BandMatrix {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        Self {
            dim,
            bandwidth,
            diags: vec![vec![0.0; dim]; bandwidth + 1],
        }
    }

    pub fn identity(dim: usize, bandwidth: usize) -> Self {
        let mut m = Self::zeros(dim, bandwidth);
        m.diags[0].iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Number of reals held in band storage.
    pub fn storage_len(&self) -> usize {
        self.diags.iter().map(Vec::len).sum()
    }

    /// Diagonal `k` below the main one (slots past `dim - k` are padding).
    pub fn diagonal(&self, k: usize) -> &[f64] {
        &self.diags[k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = hi - lo;
        if k > self.bandwidth {
            0.0
        } else {
            self.diags[k][lo]
        }
    }

    /// Sets the symmetric pair `(i, j)`, `(j, i)`.
    ///
    /// Panics when the entry lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        assert!(hi - lo <= self.bandwidth, "entry ({i}, {j}) outside band");
        self.diags[hi - lo][lo] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let current = self.get(i, j);
        self.set(i, j, current + value);
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y: Vec<f64> = self.diags[0].iter().zip(x).map(|(a, b)| a * b).collect();
        for k in 1..=self.bandwidth.min(self.dim.saturating_sub(1)) {
            let d = &self.diags[k];
            for j in 0..self.dim - k {
                y[j + k] += d[j] * x[j];
                y[j] += d[j] * x[j + k];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.dim, |i, j| self.get(i, j))
    }

    /// Largest `k` with a nonzero entry on diagonal `k`.
    pub fn occupied_bandwidth(&self) -> usize {
        (0..=self.bandwidth)
            .rev()
            .find(|&k| self.diags[k][..self.dim - k.min(self.dim)].iter().any(|&v| v != 0.0))
            .unwrap_or(0)
    }

    /// Principal submatrix on the sorted index set `keep`, re-banded to the
    /// smallest bandwidth covering its nonzero entries.
    pub fn principal_submatrix(&self, keep: &[usize]) -> BandMatrix {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut pos = vec![usize::MAX; self.dim];
        for (p, &i) in keep.iter().enumerate() {
            pos[i] = p;
        }
        let mut width = 0;
        for k in 1..=self.bandwidth.min(self.dim.saturating_sub(1)) {
            for j in 0..self.dim - k {
                if self.diags[k][j] != 0.0 && pos[j] != usize::MAX && pos[j + k] != usize::MAX {
                    width = width.max(pos[j + k] - pos[j]);
                }
            }
        }
        let mut sub = BandMatrix::zeros(keep.len(), width);
        for k in 0..=self.bandwidth.min(self.dim.saturating_sub(1)) {
            for j in 0..self.dim - k {
                let v = self.diags[k][j];
                if v != 0.0 && pos[j] != usize::MAX && pos[j + k] != usize::MAX {
                    sub.set(pos[j + k], pos[j], v);
                }
            }
        }
        sub
    }

    /// Band Cholesky factorization `A = L L^T`.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let b = self.bandwidth;
        let d = self.dim;
        let mut l = self.clone();
        let mut flops: u64 = 0;
        let mut col = vec![0.0; b + 1];
        for j in 0..d {
            let last = (j + b).min(d - 1);
            for i in j..=last {
                col[i - j] = l.diags[i - j][j];
            }
            for k in j.saturating_sub(b)..j {
                let ljk = l.diags[j - k][k];
                if ljk == 0.0 {
                    // structural zeros still count toward the band cost
                    flops += ((k + b).min(d - 1) + 1 - j) as u64;
                    continue;
                }
                let reach = (k + b).min(d - 1);
                for i in j..=reach {
                    col[i - j] -= l.diags[i - k][k] * ljk;
                }
                flops += (reach + 1 - j) as u64;
            }
            let pivot = col[0];
            if !(pivot > 0.0) || !pivot.is_finite() {
                return Err(FgnError::NotPositiveDefinite { index: j, pivot });
            }
            let root = pivot.sqrt();
            l.diags[0][j] = root;
            for i in j + 1..=last {
                l.diags[i - j][j] = col[i - j] / root;
            }
        }
        Ok(BandedCholesky { factor: l, flops })
    }
}

/// Flops of [`BandMatrix::cholesky`] on a `dim`-dimensional matrix with the
/// given bandwidth: column `j` receives one multiply-add per row of the
/// overlap with each of the previous `bandwidth` columns.
pub fn band_cholesky_flops(dim: usize, bandwidth: usize) -> u64 {
    let mut total = 0u64;
    for j in 0..dim {
        for k in j.saturating_sub(bandwidth)..j {
            total += ((k + bandwidth).min(dim - 1) + 1 - j) as u64;
        }
    }
    total
}

/// Lower band Cholesky factor with the flop count of its computation.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    factor: BandMatrix,
    flops: u64,
}

impl BandedCholesky {
    /// The factor in band storage (only the lower triangle is meaningful).
    pub fn factor(&self) -> &BandMatrix {
        &self.factor
    }

    pub fn dim(&self) -> usize {
        self.factor.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.factor.bandwidth
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn storage_len(&self) -> usize {
        self.factor.storage_len()
    }

    /// `L[i][j]` for `i >= j`.
    pub fn l(&self, i: usize, j: usize) -> f64 {
        if i < j || i - j > self.factor.bandwidth {
            0.0
        } else {
            self.factor.diags[i - j][j]
        }
    }

    /// `log |A| = 2 sum_i log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.factor.diags[0].iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solves `L u = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let bw = self.factor.bandwidth;
        let diags = &self.factor.diags;
        for i in 0..self.dim() {
            let mut s = b[i];
            for k in 1..=bw.min(i) {
                s -= diags[k][i - k] * b[i - k];
            }
            b[i] = s / diags[0][i];
        }
    }

    /// Solves `L^T x = u` in place.
    pub fn backward_in_place(&self, u: &mut [f64]) {
        let bw = self.factor.bandwidth;
        let d = self.dim();
        let diags = &self.factor.diags;
        for i in (0..d).rev() {
            let mut s = u[i];
            for k in 1..=bw.min(d - 1 - i) {
                s -= diags[k][i] * u[i + k];
            }
            u[i] = s / diags[0][i];
        }
    }

    /// `A^{-1} b` by forward and back substitution.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim() {
            return Err(FgnError::Dimension(format!(
                "right-hand side has length {}, matrix dimension {}",
                rhs.len(),
                self.dim()
            )));
        }
        let mut x = rhs.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        Ok(x)
    }

    /// One draw from `N(0, A^{-1})`: standard normals pushed through `L^{-T}`.
    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        self.backward_in_place(&mut z);
        z
    }

    /// Entries of `A^{-1}` inside the band, by the Takahashi recursion
    /// `S_ij = delta_ij / L_ii^2 - (1/L_ii) sum_{k>i} L_ki S_kj`.
    pub fn partial_inverse(&self) -> BandMatrix {
        let b = self.factor.bandwidth;
        let d = self.dim();
        let l = &self.factor.diags;
        let mut s = BandMatrix::zeros(d, b);
        for i in (0..d).rev() {
            let lii = l[0][i];
            let reach = (i + b).min(d - 1);
            for j in (i..=reach).rev() {
                let mut acc = 0.0;
                for k in i + 1..=reach {
                    acc += l[k - i][i] * s.get(k, j);
                }
                let value = if j == i {
                    1.0 / (lii * lii) - acc / lii
                } else {
                    -acc / lii
                };
                s.diags[j - i][i] = value;
            }
        }
        s
    }

    /// Diagonal of `A^{-1}`.
    pub fn marginal_variances(&self) -> Vec<f64> {
        self.partial_inverse().diags.swap_remove(0)
    }
}

/// Tridiagonal precision of a unit-variance AR(1) process of length `n`:
/// `(1 - phi^2)^{-1}` times the matrix with corners 1, interior diagonal
/// `1 + phi^2` and off-diagonal `-phi`.
pub fn ar1_precision(phi: f64, n: usize) -> Result<BandMatrix> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(domain("phi", phi, "(0, 1)"));
    }
    let mut r = BandMatrix::zeros(n, 1);
    if n == 1 {
        r.set(0, 0, 1.0);
        return Ok(r);
    }
    let scale = 1.0 / (1.0 - phi * phi);
    for t in 0..n {
        let diag = if t == 0 || t == n - 1 { 1.0 } else { 1.0 + phi * phi };
        r.set(t, t, scale * diag);
        if t + 1 < n {
            r.set(t + 1, t, -phi * scale);
        }
    }
    Ok(r)
}

/// Joint precision of `(x, z_1, .., z_m)` for the approximate model
/// `x = sigma (sum_j sqrt(w_j) z_j + e)`, `e ~ N(0, I / kappa)`, in the
/// time-interleaved ordering.
#[derive(Debug, Clone)]
pub struct BandedPrecision {
    matrix: BandMatrix,
    mixture: Ar1Mixture,
    sigma: f64,
    kappa: f64,
    n: usize,
}

/// Assembles the `(m+1) n` joint precision with bandwidth `m+1`.
pub fn assemble_precision(
    mixture: &Ar1Mixture,
    sigma: f64,
    n: usize,
    kappa: f64,
) -> Result<BandedPrecision> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(domain("sigma", sigma, "(0, inf)"));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(domain("kappa", kappa, "(0, inf)"));
    }
    if n == 0 {
        return Err(FgnError::Dimension("series length must be positive".into()));
    }
    let m = mixture.m();
    let block = m + 1;
    let mut q = BandMatrix::zeros(block * n, block);
    let sqrt_w: Vec<f64> = mixture.weights().iter().map(|w| w.sqrt()).collect();
    let ar: Vec<BandMatrix> = mixture
        .coefficients()
        .iter()
        .map(|&phi| ar1_precision(phi, n))
        .collect::<Result<_>>()?;
    for t in 0..n {
        let x = t * block;
        q.set(x, x, kappa / (sigma * sigma));
        for j in 0..m {
            let zj = x + 1 + j;
            q.set(zj, x, -sqrt_w[j] * kappa / sigma);
            q.set(zj, zj, ar[j].get(t, t) + mixture.weights()[j] * kappa);
            for i in 0..j {
                q.set(zj, x + 1 + i, sqrt_w[i] * sqrt_w[j] * kappa);
            }
            if t + 1 < n {
                q.set(zj + block, zj, ar[j].get(t + 1, t));
            }
        }
    }
    Ok(BandedPrecision {
        matrix: q,
        mixture: mixture.clone(),
        sigma,
        kappa,
        n,
    })
}

impl BandedPrecision {
    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    pub fn mixture(&self) -> &Ar1Mixture {
        &self.mixture
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn m(&self) -> usize {
        self.mixture.m()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.matrix.bandwidth
    }

    /// Position of `x_t`.
    pub fn x_index(&self, t: usize) -> usize {
        t * (self.m() + 1)
    }

    /// Position of `z_{j,t}` for component `j` in `0..m`.
    pub fn z_index(&self, t: usize, j: usize) -> usize {
        t * (self.m() + 1) + 1 + j
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        self.matrix.cholesky()
    }

    /// `log |Q|` in closed form: the joint density factors into
    /// `p(z) p(x | z)`, giving `n log(kappa / sigma^2) + sum_j log |R(phi_j)|`
    /// with `log |R(phi)| = -(n - 1) log(1 - phi^2)`.
    pub fn logdet_closed_form(&self) -> f64 {
        let n = self.n as f64;
        let ar: f64 = self
            .mixture
            .coefficients()
            .iter()
            .map(|phi| -(n - 1.0) * (1.0 - phi * phi).ln())
            .sum();
        n * (self.kappa / (self.sigma * self.sigma)).ln() + ar
    }

    /// `v^T Q v` evaluated through the model structure,
    /// `(kappa/sigma^2) sum_t (x_t - sigma sum_j sqrt(w_j) z_jt)^2 + sum_j z_j^T R_j z_j`,
    /// which avoids the cancellation of the `kappa`-sized terms of `Q v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        assert_eq!(v.len(), self.dim());
        let m = self.m();
        let sqrt_w: Vec<f64> = self.mixture.weights().iter().map(|w| w.sqrt()).collect();
        let mut noise = 0.0;
        for t in 0..self.n {
            let base = self.x_index(t);
            let fitted: f64 = (0..m).map(|j| sqrt_w[j] * v[base + 1 + j]).sum();
            let r = v[base] - self.sigma * fitted;
            noise += r * r;
        }
        let mut latent = 0.0;
        for (j, &phi) in self.mixture.coefficients().iter().enumerate() {
            let z: Vec<f64> = (0..self.n).map(|t| v[self.z_index(t, j)]).collect();
            latent += ar1_quadratic(phi, &z);
        }
        self.kappa / (self.sigma * self.sigma) * noise + latent
    }

    /// Draw of the full augmented vector.
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>> {
        Ok(self.cholesky()?.sample(seed))
    }

    /// Draw of the `x` sub-vector only.
    pub fn sample_x(&self, seed: u64) -> Result<Vec<f64>> {
        let v = self.sample(seed)?;
        Ok((0..self.n).map(|t| v[self.x_index(t)]).collect())
    }
}

/// Latent components given an exactly observed `x`.
#[derive(Debug, Clone)]
pub struct LatentGivenX {
    chol: BandedCholesky,
    /// `E[z | x]` interleaved by time, `z_mean[t * m + j]`
    z_mean: Vec<f64>,
}

impl LatentGivenX {
    /// Factor of the rotated conditional precision; its determinant equals
    /// that of `Q_zz`.
    pub fn cholesky(&self) -> &BandedCholesky {
        &self.chol
    }

    pub fn z_mean(&self) -> &[f64] {
        &self.z_mean
    }
}

impl BandedPrecision {
    /// Conditional law of `z` given exactly observed `x`.
    ///
    /// In the original coordinates the precision of `z | x` carries
    /// `kappa`-sized couplings `sqrt(w_i w_j) kappa` whose elimination
    /// cancels catastrophically. Each time block is therefore rotated by the
    /// Householder reflection `U` with `U sqrt(w) = e_1`, which confines
    /// `kappa` to one diagonal entry per time point; the bandwidth grows to
    /// `2m - 1` and the determinant is unchanged.
    pub fn latent_given_x(&self, x: &[f64]) -> Result<LatentGivenX> {
        if x.len() != self.n {
            return Err(FgnError::Dimension(format!(
                "data has length {}, precision has {} time points",
                x.len(),
                self.n
            )));
        }
        let m = self.m();
        let n = self.n;
        let u = householder_to_e1(self.mixture.weights());
        let phis = self.mixture.coefficients();
        let ar: Vec<BandMatrix> = phis.iter().map(|&p| ar1_precision(p, n)).collect::<Result<_>>()?;
        let rotate = |diag: &dyn Fn(usize) -> f64, i: usize, k: usize| -> f64 {
            (0..m).map(|j| u[i][j] * diag(j) * u[k][j]).sum()
        };
        let width = if m == 1 { 1 } else { 2 * m - 1 };
        let mut a = BandMatrix::zeros(m * n, width);
        for t in 0..n {
            let base = t * m;
            for i in 0..m {
                for k in 0..=i {
                    let mut v = rotate(&|j| ar[j].get(t, t), i, k);
                    if i == 0 && k == 0 {
                        v += self.kappa;
                    }
                    a.set(base + i, base + k, v);
                }
            }
            if t + 1 < n {
                for i in 0..m {
                    for k in 0..m {
                        a.set(base + m + i, base + k, rotate(&|j| ar[j].get(t + 1, t), i, k));
                    }
                }
            }
        }
        let chol = a.cholesky()?;
        // right-hand side -Q_zx x rotates to (kappa / sigma) x_t e_1
        let mut rhs = vec![0.0; m * n];
        for t in 0..n {
            rhs[t * m] = self.kappa / self.sigma * x[t];
        }
        let y = chol.solve(&rhs)?;
        let mut z_mean = vec![0.0; m * n];
        for t in 0..n {
            for j in 0..m {
                z_mean[t * m + j] = (0..m).map(|i| u[i][j] * y[t * m + i]).sum();
            }
        }
        Ok(LatentGivenX { chol, z_mean })
    }

    /// Augmented vector `(x_t, z_{1t}, .., z_{mt})` from `x` and interleaved `z`.
    pub fn interleave(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut v = Vec::with_capacity(self.dim());
        for t in 0..self.n {
            v.push(x[t]);
            v.extend_from_slice(&z[t * m..(t + 1) * m]);
        }
        v
    }
}

/// Symmetric orthogonal `U` with `U sqrt(w) = e_1` (`sum w = 1`).
fn householder_to_e1(weights: &[f64]) -> Vec<Vec<f64>> {
    let m = weights.len();
    let mut v: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    // v = a + e_1 reflects a onto -e_1; flip the sign so a maps to +e_1
    v[0] += 1.0;
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| {
                    let id = if i == k { 1.0 } else { 0.0 };
                    -(id - 2.0 * v[i] * v[k] / norm2)
                })
                .collect()
        })
        .collect()
}

/// `z^T R(phi) z` for a unit-variance AR(1) precision.
fn ar1_quadratic(phi: f64, z: &[f64]) -> f64 {
    let n = z.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return z[0] * z[0];
    }
    // z_1^2 + sum_t (z_t - phi z_{t-1})^2, all over (1 - phi^2)
    let innovations: f64 = z.windows(2).map(|w| (w[1] - phi * w[0]).powi(2)).sum();
    z[0] * z[0] + innovations / (1.0 - phi * phi)
}

/// Posterior of the augmented vector given observations of `x`.
#[derive(Debug, Clone)]
pub struct Conditioned {
    chol: BandedCholesky,
    /// indices factored (all coordinates not fixed by exact observations)
    free: Vec<usize>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    n: usize,
    m: usize,
}

impl Conditioned {
    /// Factor of the conditional precision on the free coordinates.
    pub fn cholesky(&self) -> &BandedCholesky {
        &self.chol
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    /// Conditional mean of the full augmented vector.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Conditional marginal standard deviations of the augmented vector.
    pub fn sd(&self) -> &[f64] {
        &self.sd
    }

    fn stride(&self, offset: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).map(move |t| t * (self.m + 1) + offset)
    }

    pub fn x_mean(&self) -> Vec<f64> {
        self.stride(0).map(|i| self.mean[i]).collect()
    }

    pub fn x_sd(&self) -> Vec<f64> {
        self.stride(0).map(|i| self.sd[i]).collect()
    }

    /// Conditional mean of `z_j`.
    pub fn z_mean(&self, j: usize) -> Vec<f64> {
        self.stride(1 + j).map(|i| self.mean[i]).collect()
    }

    pub fn z_sd(&self, j: usize) -> Vec<f64> {
        self.stride(1 + j).map(|i| self.sd[i]).collect()
    }

    /// Log-determinant of the conditional precision of the free coordinates.
    pub fn logdet(&self) -> f64 {
        self.chol.logdet()
    }
}

/// Conditions the approximate model on `obs`.
///
/// Observation precisions attach to the `x` coordinates: finite values are
/// added to the diagonal, zero marks missing data, and infinite values fix
/// `x_t` to the data (the factorization then runs on the submatrix of the
/// remaining coordinates). Horizon points carry no data.
pub fn condition(q: &BandedPrecision, obs: &ObservationModel) -> Result<Conditioned> {
    let solved = solve_conditional(q, obs)?;
    let var = solved.chol.marginal_variances();
    let mut sd = vec![0.0; q.dim()];
    for (p, &i) in solved.free.iter().enumerate() {
        sd[i] = var[p].max(0.0).sqrt();
    }
    Ok(Conditioned {
        chol: solved.chol,
        free: solved.free,
        mean: solved.mean,
        sd,
        n: q.len(),
        m: q.m(),
    })
}

pub(crate) struct ConditionalMean {
    pub chol: BandedCholesky,
    pub free: Vec<usize>,
    pub mean: Vec<f64>,
}

/// Factorization and conditional mean without the marginal variances.
pub(crate) fn solve_conditional(q: &BandedPrecision, obs: &ObservationModel) -> Result<ConditionalMean> {
    if obs.total_len() != q.len() {
        return Err(FgnError::Dimension(format!(
            "observation model covers {} time points, precision has {}",
            obs.total_len(),
            q.len()
        )));
    }
    let d = obs.extended_precision();
    let y = obs.extended_y();
    let dim = q.dim();
    let mut fixed: Vec<Option<f64>> = vec![None; dim];
    let mut a = q.matrix.clone();
    let mut rhs = vec![0.0; dim];
    for t in 0..q.len() {
        let xi = q.x_index(t);
        if d[t] == f64::INFINITY {
            fixed[xi] = Some(y[t]);
        } else if d[t] > 0.0 {
            a.add(xi, xi, d[t]);
            rhs[xi] = d[t] * y[t];
        }
    }
    let free: Vec<usize> = (0..dim).filter(|&i| fixed[i].is_none()).collect();
    let b = a.bandwidth;
    // move known values to the right-hand side: rhs_free -= Q_{free,fixed} y_fixed
    for (f, value) in fixed.iter().enumerate() {
        if let Some(value) = value {
            for i in f.saturating_sub(b)..=(f + b).min(dim - 1) {
                if fixed[i].is_none() {
                    rhs[i] -= a.get(i, f) * value;
                }
            }
        }
    }
    let (chol, free_mean) = if free.is_empty() {
        (BandMatrix::identity(0, 0).cholesky()?, Vec::new())
    } else {
        let sub = if free.len() == dim {
            a
        } else {
            a.principal_submatrix(&free)
        };
        let chol = sub.cholesky()?;
        let rhs_free: Vec<f64> = free.iter().map(|&i| rhs[i]).collect();
        let mean = chol.solve(&rhs_free)?;
        (chol, mean)
    };
    let mut mean = vec![0.0; dim];
    for (i, v) in fixed.iter().enumerate() {
        if let Some(v) = v {
            mean[i] = *v;
        }
    }
    for (p, &i) in free.iter().enumerate() {
        mean[i] = free_mean[p];
    }
    Ok(ConditionalMean { chol, free, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix4() -> Ar1Mixture {
        Ar1Mixture::new(
            0.8,
            vec![0.1, 0.15, 0.25, 0.5],
            vec![0.999, 0.98, 0.85, 0.3],
        )
        .unwrap()
    }

    #[test]
    fn ar1_precision_three_by_three() {
        let r = ar1_precision(0.5, 3).unwrap().to_dense();
        let s = 1.0 / 0.75;
        let expected = DenseMatrix::from_fn(3, |i, j| {
            s * [[1.0, -0.5, 0.0], [-0.5, 1.25, -0.5], [0.0, -0.5, 1.0]][i][j]
        });
        assert!(r.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn ar1_precision_near_zero_is_identity() {
        let r = ar1_precision(1e-12, 4).unwrap().to_dense();
        assert!(r.max_abs_diff(&DenseMatrix::identity(4)) < 1e-11);
        assert!(ar1_precision(0.0, 4).is_err());
        assert!(ar1_precision(1.0, 4).is_err());
    }

    #[test]
    fn ar1_precision_inverts_geometric_covariance() {
        let phi: f64 = 0.8;
        let inv = ar1_precision(phi, 6).unwrap().to_dense().cholesky().unwrap().inverse();
        for i in 0..6usize {
            for j in 0..6 {
                let expected = phi.powi(i.abs_diff(j) as i32);
                assert!((inv[(i, j)] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_component_assembly_by_hand() {
        let mix = Ar1Mixture::new(0.7, vec![1.0], vec![0.5]).unwrap();
        let q = assemble_precision(&mix, 1.0, 2, 10.0).unwrap();
        // ordering (x1, z1, x2, z2); R(0.5) for n = 2 is [[1, -.5], [-.5, 1]] / 0.75
        let r = 1.0 / 0.75;
        let expected = [
            [10.0, -10.0, 0.0, 0.0],
            [-10.0, r + 10.0, 0.0, -0.5 * r],
            [0.0, 0.0, 10.0, -10.0],
            [0.0, -0.5 * r, -10.0, r + 10.0],
        ];
        let dense = q.matrix().to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert!((dense[(i, j)] - expected[i][j]).abs() < 1e-13, "({i}, {j})");
            }
        }
    }

    #[test]
    fn assembled_shape() {
        let mix = Ar1Mixture::new(0.8, vec![0.2, 0.3, 0.5], vec![0.99, 0.9, 0.4]).unwrap();
        let q = assemble_precision(&mix, 1.0, 10, default_kappa()).unwrap();
        assert_eq!(q.dim(), 40);
        assert_eq!(q.bandwidth(), 4);
        assert_eq!(q.matrix().occupied_bandwidth(), 4);
        // only AR(1) neighbours reach the outermost diagonal
        let outer = q.matrix().diagonal(4);
        for i in 0..36 {
            assert_eq!(outer[i] != 0.0, i % 4 != 0, "slot {i}");
        }
    }

    #[test]
    fn identity_factorization() {
        let id = BandMatrix::identity(12, 3);
        let chol = id.cholesky().unwrap();
        assert_eq!(chol.factor().to_dense(), DenseMatrix::identity(12));
        assert_eq!(chol.logdet(), 0.0);
        let rhs: Vec<f64> = (0..12).map(|i| i as f64 - 3.5).collect();
        assert_eq!(chol.solve(&rhs).unwrap(), rhs);
    }

    #[test]
    fn diagonal_logdet() {
        let mut a = BandMatrix::zeros(7, 2);
        for i in 0..7 {
            a.set(i, i, 4.0);
        }
        let chol = a.cholesky().unwrap();
        assert!((chol.logdet() - 7.0 * 4f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn laplacian_solve_by_hand() {
        // tridiag(-1, 2, -1), dim 5: A^{-1} e_1 = (5, 4, 3, 2, 1) / 6
        let mut a = BandMatrix::zeros(5, 1);
        for i in 0..5 {
            a.set(i, i, 2.0);
            if i + 1 < 5 {
                a.set(i + 1, i, -1.0);
            }
        }
        let x = a.cholesky().unwrap().solve(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let expected = [5.0, 4.0, 3.0, 2.0, 1.0].map(|v| v / 6.0);
        for (a, b) in x.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn not_positive_definite_reports_index() {
        let mut a = BandMatrix::zeros(3, 1);
        a.set(0, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 1.0);
        a.set(2, 1, 2.0);
        match a.cholesky() {
            Err(FgnError::NotPositiveDefinite { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flop_count_matches_enumeration() {
        // brute-force: count (i, j, k) with k < j <= i, i - k <= b, j - k <= b
        for &(d, b) in &[(1, 1), (5, 2), (12, 3), (40, 5), (7, 9)] {
            let mut brute = 0u64;
            for k in 0..d {
                for j in k + 1..d {
                    for i in j..d {
                        if i - k <= b && j - k <= b {
                            brute += 1;
                        }
                    }
                }
            }
            assert_eq!(band_cholesky_flops(d, b), brute, "d = {d}, b = {b}");
            let chol = BandMatrix::identity(d, b).cholesky().unwrap();
            assert_eq!(chol.flops(), brute);
        }
    }

    #[test]
    fn partial_inverse_matches_dense_inverse_in_band() {
        let q = assemble_precision(&mix4(), 1.3, 15, 50.0).unwrap();
        let chol = q.cholesky().unwrap();
        let s = chol.partial_inverse();
        let dense = q.matrix().to_dense().cholesky().unwrap().inverse();
        for i in 0..q.dim() {
            for j in i..(i + q.bandwidth() + 1).min(q.dim()) {
                let rel = (s.get(i, j) - dense[(i, j)]).abs() / dense[(i, i)].abs();
                assert!(rel < 1e-9, "({i}, {j})");
            }
        }
    }

    #[test]
    fn closed_form_logdet_agrees_with_factorization() {
        let q = assemble_precision(&mix4(), 0.7, 40, 1e3).unwrap();
        let chol = q.cholesky().unwrap();
        assert!((chol.logdet() - q.logdet_closed_form()).abs() < 1e-8);
    }

    #[test]
    fn structured_quadratic_form_matches_matvec() {
        let q = assemble_precision(&mix4(), 1.7, 20, 30.0).unwrap();
        let v: Vec<f64> = (0..q.dim()).map(|i| ((i * 7919) % 13) as f64 / 6.0 - 1.0).collect();
        let direct: f64 = q.matrix().matvec(&v).iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((q.quadratic_form(&v) - direct).abs() < 1e-10 * direct.abs());
    }

    #[test]
    fn householder_rotation() {
        let w = [0.1, 0.15, 0.25, 0.5];
        let u = householder_to_e1(&w);
        for i in 0..4 {
            let image: f64 = (0..4).map(|k| u[i][k] * w[k].sqrt()).sum();
            assert!((image - if i == 0 { 1.0 } else { 0.0 }).abs() < 1e-15);
            for k in 0..4 {
                let dot: f64 = (0..4).map(|j| u[i][j] * u[k][j]).sum();
                assert!((dot - if i == k { 1.0 } else { 0.0 }).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn latent_given_x_matches_subset_conditioning() {
        let q = assemble_precision(&mix4(), 1.4, 30, 1e3).unwrap();
        let x: Vec<f64> = (0..30).map(|t| (t as f64 * 0.3).sin()).collect();
        let rotated = q.latent_given_x(&x).unwrap();
        let post = condition(&q, &ObservationModel::exact(x.clone())).unwrap();
        for t in 0..30 {
            for j in 0..4 {
                let a = rotated.z_mean()[t * 4 + j];
                let b = post.mean()[q.z_index(t, j)];
                assert!((a - b).abs() < 1e-9, "t {t} j {j}: {a} vs {b}");
            }
        }
        assert!((rotated.cholesky().logdet() - post.logdet()).abs() < 1e-8);
        assert_eq!(rotated.cholesky().bandwidth(), 7);
    }

    #[test]
    fn no_data_gives_prior() {
        let q = assemble_precision(&mix4(), 2.0, 12, default_kappa()).unwrap();
        let obs = ObservationModel::new(vec![0.0; 12], vec![0.0; 12], 0).unwrap();
        let post = condition(&q, &obs).unwrap();
        let prior_sd = 2.0 * (1.0 + 1.0 / default_kappa()).sqrt();
        for (m, s) in post.x_mean().iter().zip(post.x_sd()) {
            assert!(m.abs() < 1e-12);
            assert!((s - prior_sd).abs() < 1e-7);
        }
    }

    #[test]
    fn huge_precision_reproduces_data() {
        let q = assemble_precision(&mix4(), 1.0, 30, default_kappa()).unwrap();
        let y: Vec<f64> = (0..30).map(|t| (t as f64 * 0.37).sin()).collect();
        let post = condition(&q, &ObservationModel::homogeneous(y.clone(), 1e12).unwrap()).unwrap();
        for (m, yi) in post.x_mean().iter().zip(&y) {
            assert!((m - yi).abs() < 1e-4);
        }
        assert!(post.x_sd().iter().all(|&s| s < 1e-5));
    }

    #[test]
    fn exact_observations_fix_x() {
        let q = assemble_precision(&mix4(), 1.0, 25, default_kappa()).unwrap();
        let y: Vec<f64> = (0..20).map(|t| (t as f64 * 0.5).cos()).collect();
        let obs = ObservationModel::exact(y.clone()).with_horizon(5);
        let post = condition(&q, &obs).unwrap();
        let xm = post.x_mean();
        assert_eq!(&xm[..20], &y[..]);
        assert!(post.x_sd()[..20].iter().all(|&s| s == 0.0));
        assert!(post.x_sd()[20..].iter().all(|&s| s > 0.0));
        // x fixed everywhere except the horizon: z stays banded with width m + 1 at most
        assert!(post.cholesky().bandwidth() <= 5);
    }

    #[test]
    fn condition_rejects_length_mismatch() {
        let q = assemble_precision(&mix4(), 1.0, 10, default_kappa()).unwrap();
        let obs = ObservationModel::exact(vec![0.0; 9]);
        assert!(condition(&q, &obs).is_err());
    }

    #[test]
    fn sample_identity_is_raw_normals_and_deterministic() {
        let chol = BandMatrix::identity(6, 2).cholesky().unwrap();
        let a = chol.sample(11);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(a, raw);
        assert_eq!(chol.sample(11), a);
    }
}
