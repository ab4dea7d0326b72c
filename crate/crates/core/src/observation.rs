use crate::error::{FgnError, Result};

/// Data observed through independent Gaussian noise, `y = x + e` with
/// `e ~ N(0, D^-1)` and `D` diagonal.
///
/// A precision of `0` marks a missing point (its `y` value is ignored), a
/// precision of `+inf` an exactly observed point. `horizon` counts extra
/// unobserved time points appended after the data, used for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    y: Vec<f64>,
    precision: Vec<f64>,
    horizon: usize,
}

impl ObservationModel {
    pub fn new(y: Vec<f64>, precision: Vec<f64>, horizon: usize) -> Result<Self> {
        if y.len() != precision.len() {
            return Err(FgnError::Dimension(format!(
                "{} data values but {} precisions",
                y.len(),
                precision.len()
            )));
        }
        for (i, (&yi, &di)) in y.iter().zip(&precision).enumerate() {
            if di.is_nan() || di < 0.0 {
                return Err(FgnError::Domain {
                    name: "noise precision",
                    value: di,
                    range: "[0, inf]",
                });
            }
            if di > 0.0 && !yi.is_finite() {
                return Err(FgnError::Dimension(format!(
                    "observed point {i} has non-finite value {yi}"
                )));
            }
        }
        Ok(Self {
            y,
            precision,
            horizon,
        })
    }

    /// Every point observed exactly.
    pub fn exact(y: Vec<f64>) -> Self {
        let precision = vec![f64::INFINITY; y.len()];
        Self::new(y, precision, 0).expect("finite data")
    }

    /// Every finite point observed with the same noise precision; non-finite
    /// values are treated as missing.
    pub fn homogeneous(y: Vec<f64>, precision: f64) -> Result<Self> {
        let d = y
            .iter()
            .map(|v| if v.is_finite() { precision } else { 0.0 })
            .collect();
        Self::new(y, d, 0)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    /// Number of data points (excluding the horizon).
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Data points plus horizon.
    pub fn total_len(&self) -> usize {
        self.y.len() + self.horizon
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn is_observed(&self, i: usize) -> bool {
        i < self.y.len() && self.precision[i] > 0.0
    }

    pub fn observed_count(&self) -> usize {
        self.precision.iter().filter(|&&d| d > 0.0).count()
    }

    /// Precisions over data and horizon (horizon entries are 0).
    pub fn extended_precision(&self) -> Vec<f64> {
        let mut d = self.precision.clone();
        d.resize(self.total_len(), 0.0);
        d
    }

    /// Data over data and horizon with unobserved entries set to 0.
    pub fn extended_y(&self) -> Vec<f64> {
        let mut y: Vec<f64> = self
            .y
            .iter()
            .zip(&self.precision)
            .map(|(&v, &d)| if d > 0.0 { v } else { 0.0 })
            .collect();
        y.resize(self.total_len(), 0.0);
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_values_are_ignored() {
        let obs = ObservationModel::homogeneous(vec![1.0, f64::NAN, 3.0], 2.0)
            .unwrap()
            .with_horizon(2);
        assert_eq!(obs.observed_count(), 2);
        assert_eq!(obs.extended_y(), vec![1.0, 0.0, 3.0, 0.0, 0.0]);
        assert_eq!(obs.extended_precision(), vec![2.0, 0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_negative_precision_and_unobserved_nan() {
        assert!(ObservationModel::new(vec![1.0], vec![-1.0], 0).is_err());
        assert!(ObservationModel::new(vec![f64::NAN], vec![1.0], 0).is_err());
        assert!(ObservationModel::new(vec![1.0, 2.0], vec![1.0], 0).is_err());
    }
}
