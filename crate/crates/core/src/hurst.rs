//! Hurst exponent parameterization.
//!
//! The long-memory range `1/2 < H < 1` is mapped onto the real line by
//! `H = 1/2 + (1/2) * logistic(h)`. `H = 1/2` (white noise) is accepted
//! and corresponds to `h = -inf`.

use crate::error::{domain, Result};

/// Maps the unconstrained `h` to the Hurst exponent.
pub fn hurst_from_h(h: f64) -> f64 {
    // logistic written to avoid overflow for large |h|
    let logistic = if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    };
    0.5 + 0.5 * logistic
}

/// Inverse of [`hurst_from_h`]: `h = logit(2H - 1)`.
pub fn h_from_hurst(hurst: f64) -> f64 {
    let p = 2.0 * hurst - 1.0;
    p.ln() - (-p).ln_1p()
}

/// Derivative dH/dh, used for delta-method standard errors.
pub fn dhurst_dh(h: f64) -> f64 {
    let e = (-h.abs()).exp();
    0.5 * e / ((1.0 + e) * (1.0 + e))
}

/// Hurst exponent, its unconstrained transform, and the marginal scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstParams {
    hurst: f64,
    h: f64,
    sigma: f64,
}

impl HurstParams {
    pub fn new(hurst: f64, sigma: f64) -> Result<Self> {
        validate_hurst(hurst)?;
        validate_sigma(sigma)?;
        Ok(Self {
            hurst,
            h: h_from_hurst(hurst),
            sigma,
        })
    }

    /// Builds the parameters from the unconstrained transform.
    pub fn from_h(h: f64, sigma: f64) -> Result<Self> {
        if h.is_nan() || h == f64::INFINITY {
            return Err(domain("h", h, "[-inf, inf)"));
        }
        validate_sigma(sigma)?;
        let hurst = hurst_from_h(h);
        if hurst >= 1.0 {
            return Err(domain("h", h, "values mapping below H = 1"));
        }
        Ok(Self { hurst, h, sigma })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(self, sigma: f64) -> Result<Self> {
        validate_sigma(sigma)?;
        Ok(Self { sigma, ..self })
    }
}

pub(crate) fn validate_hurst(hurst: f64) -> Result<()> {
    if (0.5..1.0).contains(&hurst) {
        Ok(())
    } else {
        Err(domain("H", hurst, "[0.5, 1)"))
    }
}

fn validate_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(domain("sigma", sigma, "(0, inf)"))
    }
}
