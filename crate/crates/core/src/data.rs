//! Reading univariate series from CSV-like text.
//!
//! One value per line, optionally preceded by a header line. A configurable
//! sentinel (default `NA`) marks missing values. An optional second column
//! holds per-point noise precisions; without it every present value is
//! treated as exactly observed.

use std::io::Read;
use std::path::Path;

use crate::error::{FgnError, Result};
use crate::observation::ObservationModel;

#[derive(Debug, Clone)]
pub struct ReadOptions {
    /// Token marking a missing value.
    pub na: String,
}

impl Default for ReadOptions {
    fn default() -> Self {
        Self { na: "NA".into() }
    }
}

/// A parsed series; missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    /// Noise precisions from the second column, when present.
    pub precision: Option<Vec<f64>>,
}

impl Series {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// Present values only, or an error naming the first gap.
    pub fn complete(&self) -> Result<Vec<f64>> {
        match self.values.iter().position(|v| v.is_nan()) {
            Some(i) => Err(FgnError::Degenerate(format!(
                "value {} is missing; this operation needs a complete series",
                i + 1
            ))),
            None => Ok(self.values.clone()),
        }
    }

    /// Observation model: missing values get precision 0, present values
    /// the second-column precision or `+inf`.
    pub fn observation_model(&self) -> Result<ObservationModel> {
        let precision = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if v.is_nan() {
                    0.0
                } else {
                    self.precision.as_ref().map_or(f64::INFINITY, |p| p[i])
                }
            })
            .collect();
        ObservationModel::new(self.values.clone(), precision, 0)
    }
}

fn parse_field(field: &str, na: &str) -> Option<f64> {
    let field = field.trim();
    if field == na {
        Some(f64::NAN)
    } else {
        field.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

/// Parses a series from any reader.
pub fn read_series<R: Read>(input: R, opts: &ReadOptions) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut values = Vec::new();
    let mut precision: Vec<f64> = Vec::new();
    let mut columns: Option<usize> = None;
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| FgnError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fields: Vec<&str> = record.iter().collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let value = parse_field(fields[0], &opts.na);
        if first {
            first = false;
            if value.is_none() {
                // header line
                continue;
            }
        }
        let value = value.ok_or_else(|| FgnError::Parse {
            line,
            message: format!("cannot parse value '{}'", fields[0]),
        })?;
        if fields.len() > 2 {
            return Err(FgnError::Parse {
                line,
                message: format!("expected at most 2 columns, found {}", fields.len()),
            });
        }
        match *columns.get_or_insert(fields.len()) {
            c if c != fields.len() => {
                return Err(FgnError::Parse {
                    line,
                    message: format!("expected {c} columns, found {}", fields.len()),
                })
            }
            2 => {
                let d: f64 = fields[1].parse().map_err(|_| FgnError::Parse {
                    line,
                    message: format!("cannot parse precision '{}'", fields[1]),
                })?;
                if d.is_nan() || d < 0.0 {
                    return Err(FgnError::Parse {
                        line,
                        message: format!("precision {d} must be nonnegative"),
                    });
                }
                precision.push(d);
            }
            _ => {}
        }
        values.push(value);
    }
    let precision = (columns == Some(2)).then_some(precision);
    Ok(Series { values, precision })
}

pub fn load_series(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<Series> {
    let file = std::fs::File::open(path)?;
    read_series(std::io::BufReader::new(file), opts)
}
