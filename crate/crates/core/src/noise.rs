//! Pixel noise laws and the per-pixel colour probabilities they induce.
//!
//! An observation is `Y = Im + noise`, where `Im` is 0 (white) or 1 (black).
//! For the Gaussian law the noise is `sigma * eps` with `eps` standard
//! normal. An empirical table describes the distribution of the whole noise
//! term directly, so it carries unit scale and is not standardized.

use std::f64::consts::SQRT_2;
use std::path::Path;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Tolerance for the last cumulative probability of a table to count as 1.
const TABLE_END_TOLERANCE: f64 = 1e-9;

/// Bisection stops once the bracket is this narrow.
const QUANTILE_TOLERANCE: f64 = 1e-12;

/// A distribution given as `(value, cumulative probability)` knots.
///
/// Evaluation is right-continuous steps by default: `F(x)` is the
/// cumulative probability of the last knot at or below `x`. With
/// `interpolate` set, `F` is piecewise linear between knots instead.
/// Below the first knot `F = 0`, at and above the last knot `F = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct EmpiricalTable {
    values: Vec<f64>,
    cumulative: Vec<f64>,
    interpolate: bool,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    points: Vec<[f64; 2]>,
    #[serde(default)]
    interpolate: bool,
}

impl TryFrom<RawTable> for EmpiricalTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        EmpiricalTable::new(raw.points.iter().map(|p| (p[0], p[1])), raw.interpolate)
    }
}

impl From<EmpiricalTable> for RawTable {
    fn from(t: EmpiricalTable) -> Self {
        RawTable {
            points: t
                .values
                .iter()
                .zip(&t.cumulative)
                .map(|(&v, &c)| [v, c])
                .collect(),
            interpolate: t.interpolate,
        }
    }
}

impl EmpiricalTable {
    pub fn new(points: impl IntoIterator<Item = (f64, f64)>, interpolate: bool) -> Result<Self> {
        let (values, mut cumulative): (Vec<f64>, Vec<f64>) = points.into_iter().unzip();
        if values.is_empty() {
            return Err(Error::InvalidTable("table has no rows".into()));
        }
        for (i, (&v, &c)) in values.iter().zip(&cumulative).enumerate() {
            if !v.is_finite() || !c.is_finite() {
                return Err(Error::InvalidTable(format!("row {}: non-finite entry", i + 1)));
            }
            if !(0.0..=1.0 + TABLE_END_TOLERANCE).contains(&c) {
                return Err(Error::InvalidTable(format!(
                    "row {}: cumulative probability {c} outside [0, 1]",
                    i + 1
                )));
            }
            if i > 0 {
                if v <= values[i - 1] {
                    return Err(Error::InvalidTable(format!(
                        "row {}: values must be strictly increasing",
                        i + 1
                    )));
                }
                if c < cumulative[i - 1] {
                    return Err(Error::InvalidTable(format!(
                        "row {}: cumulative probabilities must be nondecreasing",
                        i + 1
                    )));
                }
            }
        }
        let last = cumulative.last_mut().expect("nonempty");
        if (*last - 1.0).abs() > TABLE_END_TOLERANCE {
            return Err(Error::InvalidTable(format!(
                "last cumulative probability is {last}, expected 1"
            )));
        }
        *last = 1.0;
        Ok(Self {
            values,
            cumulative,
            interpolate,
        })
    }

    /// A point mass at `value`.
    pub fn point_mass(value: f64) -> Self {
        Self {
            values: vec![value],
            cumulative: vec![1.0],
            interpolate: false,
        }
    }

    /// Reads a two-column `value,cumulative_probability` CSV. A header line
    /// is skipped if its first field is not a number.
    pub fn from_csv_path(path: impl AsRef<Path>, interpolate: bool) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, interpolate).map_err(|e| match e {
            Error::InvalidTable(message) => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_csv_str(text: &str, interpolate: bool) -> Result<Self> {
        let mut points = Vec::new();
        let mut seen_content = false;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 2 {
                return Err(Error::InvalidTable(format!(
                    "line {}: expected 2 columns, found {}",
                    idx + 1,
                    fields.len()
                )));
            }
            let value = fields[0].parse::<f64>();
            let header_row = !seen_content;
            seen_content = true;
            if value.is_err() && header_row {
                continue;
            }
            let value = value
                .map_err(|e| Error::InvalidTable(format!("line {}: {}: {e}", idx + 1, fields[0])))?;
            let cum = fields[1]
                .parse::<f64>()
                .map_err(|e| Error::InvalidTable(format!("line {}: {}: {e}", idx + 1, fields[1])))?;
            points.push((value, cum));
        }
        Self::new(points, interpolate)
    }

    pub fn interpolate(&self) -> bool {
        self.interpolate
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.cumulative.iter().copied())
    }

    fn cdf(&self, x: f64) -> f64 {
        let idx = self.values.partition_point(|&v| v <= x);
        if idx == 0 {
            return 0.0;
        }
        if !self.interpolate || idx == self.values.len() {
            return self.cumulative[idx - 1];
        }
        let (v0, v1) = (self.values[idx - 1], self.values[idx]);
        let (c0, c1) = (self.cumulative[idx - 1], self.cumulative[idx]);
        c0 + (x - v0) / (v1 - v0) * (c1 - c0)
    }

    /// Smallest `x` with `F(x) >= p`, for `p` in `(0, 1]`.
    fn quantile(&self, p: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c < p);
        let k = k.min(self.values.len() - 1);
        if !self.interpolate || k == 0 {
            return self.values[k];
        }
        self.inverse_on_segment(k, p)
    }

    /// Largest `x` with `F(x) <= p`, for `p` in `[0, 1)`.
    fn upper_quantile(&self, p: f64) -> f64 {
        let k = self.cumulative.partition_point(|&c| c <= p);
        let k = k.min(self.values.len() - 1);
        if !self.interpolate || k == 0 {
            return self.values[k];
        }
        self.inverse_on_segment(k, p)
    }

    fn inverse_on_segment(&self, k: usize, p: f64) -> f64 {
        let (v0, v1) = (self.values[k - 1], self.values[k]);
        let (c0, c1) = (self.cumulative[k - 1], self.cumulative[k]);
        if c1 == c0 {
            return v0;
        }
        v0 + (p - c0) / (c1 - c0) * (v1 - v0)
    }
}

/// Noise law and scale for the observation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `sigma * eps` with `eps ~ N(0, 1)`.
    StandardGaussian { sigma: f64 },
    /// Noise term distributed exactly as the table (unit scale).
    EmpiricalTable { table: EmpiricalTable },
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(NoiseModel::StandardGaussian { sigma })
    }

    pub fn empirical(table: EmpiricalTable) -> Self {
        NoiseModel::EmpiricalTable { table }
    }

    /// Scale applied before evaluating the law: `sigma` for the Gaussian,
    /// 1 for tables.
    pub fn scale(&self) -> f64 {
        match self {
            NoiseModel::StandardGaussian { sigma } => *sigma,
            NoiseModel::EmpiricalTable { .. } => 1.0,
        }
    }

    pub fn is_continuous(&self) -> bool {
        match self {
            NoiseModel::StandardGaussian { .. } => true,
            NoiseModel::EmpiricalTable { table } => {
                table.interpolate && table.cumulative[0] == 0.0
            }
        }
    }

    /// Distribution function `F` of the unscaled law.
    ///
    /// The Gaussian case goes through `erfc`, whose absolute error is far
    /// below 1e-12 over the whole real line.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            NoiseModel::StandardGaussian { .. } => 0.5 * libm::erfc(-x / SQRT_2),
            NoiseModel::EmpiricalTable { table } => table.cdf(x),
        }
    }

    /// Smallest `x` with `F(x) >= p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {p}")));
        }
        Ok(match self {
            NoiseModel::StandardGaussian { .. } => self.bisect(|x| self.cdf(x) >= p),
            NoiseModel::EmpiricalTable { table } => table.quantile(p),
        })
    }

    /// Largest `x` with `F(x) <= p`. Equals [`quantile`](Self::quantile)
    /// wherever `F` is strictly increasing.
    pub(crate) fn upper_quantile(&self, p: f64) -> f64 {
        match self {
            NoiseModel::StandardGaussian { .. } => self.bisect(|x| self.cdf(x) > p),
            NoiseModel::EmpiricalTable { table } => table.upper_quantile(p),
        }
    }

    /// Returns the smallest grid point where a monotone predicate flips to true.
    fn bisect(&self, pred: impl Fn(f64) -> bool) -> f64 {
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        while hi - lo > QUANTILE_TOLERANCE * hi.abs().max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if pred(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// One draw of the full noise term.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseModel::StandardGaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            NoiseModel::EmpiricalTable { table } => table.quantile(rng.sample(Open01)),
        }
    }

    /// `count` independent draws of the noise term, reproducible from `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }

    /// `P0(Y >= y)`: probability a white pixel is observed at or above `y`.
    pub fn white_exceed_prob(&self, y: f64) -> f64 {
        1.0 - self.cdf(y / self.scale())
    }

    /// `P1(Y <= y)`: probability a black pixel is observed at or below `y`.
    pub fn black_below_prob(&self, y: f64) -> f64 {
        self.cdf((y - 1.0) / self.scale())
    }
}
