//! Naive dense linear algebra.
//!
//! These routines back the O(n^3) reference computations (conditional
//! Gaussians with arbitrary noise, Kullback-Leibler divergence) and serve as
//! validation oracles for the Toeplitz and banded fast paths. They are
//! written as plain triple loops on purpose and share no code with those
//! paths.

use crate::error::{FgnError, Result};

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    /// Symmetric Toeplitz matrix `T_ij = scale * acf[|i - j|]`.
    pub fn toeplitz(acf: &[f64], n: usize, scale: f64) -> Result<Self> {
        if acf.len() < n {
            return Err(FgnError::Dimension(format!(
                "autocorrelation has {} lags, need {n}",
                acf.len()
            )));
        }
        Ok(Self::from_fn(n, |i, j| scale * acf[i.abs_diff(j)]))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, |i, j| self[(j, i)])
    }

    /// Principal submatrix on the given index set.
    pub fn select(&self, idx: &[usize]) -> DenseMatrix {
        DenseMatrix::from_fn(idx.len(), |a, b| self[(idx[a], idx[b])])
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Lower Cholesky factor by the textbook column algorithm.
    pub fn cholesky(&self) -> Result<DenseCholesky> {
        let n = self.n;
        let mut l = DenseMatrix::zeros(n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(FgnError::NotPositiveDefinite { index: j, pivot: d });
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(DenseCholesky { l })
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Dense lower-triangular Cholesky factor.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    l: DenseMatrix,
}

impl DenseCholesky {
    pub fn factor(&self) -> &DenseMatrix {
        &self.l
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.l.n).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `L u = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let mut u = b.to_vec();
        for i in 0..n {
            let mut s = u[i];
            for k in 0..i {
                s -= self.l[(i, k)] * u[k];
            }
            u[i] = s / self.l[(i, i)];
        }
        u
    }

    /// Solves `L^T x = u`.
    pub fn backward(&self, u: &[f64]) -> Vec<f64> {
        let n = self.l.n;
        let mut x = u.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(b))
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.l.n;
        let mut inv = DenseMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }

    /// Zero-mean Gaussian log-density `log N(x; 0, A)` where `A = L L^T`.
    pub fn gaussian_logpdf(&self, x: &[f64]) -> f64 {
        let u = self.forward(x);
        let quad: f64 = u.iter().map(|v| v * v).sum();
        let n = x.len() as f64;
        -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.logdet() - 0.5 * quad
    }
}

/// Conditional moments of a zero-mean Gaussian vector observed with
/// independent noise.
///
/// `cov` is the prior covariance of the latent vector, `y` the data and
/// `precision` the noise precision per coordinate: `0` marks an unobserved
/// coordinate, `+inf` an exact observation. Returns the conditional mean and
/// standard deviation of every coordinate, computed from the partitioned
/// covariance formulas.
pub fn gaussian_conditional(
    cov: &DenseMatrix,
    y: &[f64],
    precision: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cov.dim();
    if y.len() != n || precision.len() != n {
        return Err(FgnError::Dimension(format!(
            "covariance is {n}x{n}, data {} and precisions {}",
            y.len(),
            precision.len()
        )));
    }
    let observed: Vec<usize> = (0..n).filter(|&i| precision[i] > 0.0).collect();
    if observed.is_empty() {
        return Err(FgnError::NoData);
    }
    let mut k = cov.select(&observed);
    for (a, &i) in observed.iter().enumerate() {
        k[(a, a)] += 1.0 / precision[i];
    }
    let chol = k.cholesky()?;
    let y_obs: Vec<f64> = observed.iter().map(|&i| y[i]).collect();
    let alpha = chol.solve(&y_obs);

    let mut mean = vec![0.0; n];
    let mut sd = vec![0.0; n];
    let mut c = vec![0.0; observed.len()];
    for i in 0..n {
        for (a, &o) in observed.iter().enumerate() {
            c[a] = cov[(i, o)];
        }
        mean[i] = c.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let u = chol.forward(&c);
        let explained: f64 = u.iter().map(|v| v * v).sum();
        sd[i] = (cov[(i, i)] - explained).max(0.0).sqrt();
    }
    Ok((mean, sd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = DenseMatrix::from_fn(4, |i, j| if i == j { 4.0 } else { 1.0 / (1 + i + j) as f64 });
        let chol = a.cholesky().unwrap();
        let l = chol.factor();
        let back = l.matmul(&l.transpose());
        assert!(back.max_abs_diff(&a) < 1e-14);
        let inv = chol.inverse();
        assert!(inv.matmul(&a).max_abs_diff(&DenseMatrix::identity(4)) < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        let a = DenseMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(
            a.cholesky(),
            Err(FgnError::NotPositiveDefinite { index: 1, .. })
        ));
    }

    #[test]
    fn bivariate_conditional_matches_closed_form() {
        let rho = 0.6;
        let cov = DenseMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { rho });
        let (mean, sd) = gaussian_conditional(&cov, &[1.5, 0.0], &[f64::INFINITY, 0.0]).unwrap();
        assert!((mean[1] - rho * 1.5).abs() < 1e-15);
        assert!((sd[1] - (1.0 - rho * rho).sqrt()).abs() < 1e-15);
        assert_eq!(sd[0], 0.0);
    }
}
