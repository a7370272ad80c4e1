use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Floor on the per-channel standard deviation.
pub const SIGMA_MIN: f64 = 1e-8;

/// Rows accumulated before statistics freeze automatically.
pub const MAX_ACCUMULATE: u64 = 1_000_000;

/// Online per-channel mean/variance (Welford) with a freeze switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    frozen: bool,
    max_accumulate: u64,
}

impl Normalizer {
    pub fn new(width: usize) -> Normalizer {
        Normalizer::with_limit(width, MAX_ACCUMULATE)
    }

    pub fn with_limit(width: usize, max_accumulate: u64) -> Normalizer {
        Normalizer {
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
            frozen: false,
            max_accumulate,
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard deviation per channel, floored at [`SIGMA_MIN`].
    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&m2| {
                let var = if self.count > 0 { m2 / self.count as f64 } else { 1.0 };
                var.sqrt().max(SIGMA_MIN)
            })
            .collect()
    }

    /// Folds a single row into the statistics. Ignored once frozen.
    pub fn accumulate_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.width(), "normalizer row width");
        if self.frozen {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
        if self.count >= self.max_accumulate {
            self.frozen = true;
        }
    }

    pub fn accumulate(&mut self, rows: &Matrix) {
        for i in 0..rows.rows() {
            if self.frozen {
                break;
            }
            self.accumulate_row(rows.row(i));
        }
    }

    fn check(&self, cols: usize) -> Result<()> {
        if !self.frozen {
            return Err(Error::State("normalizer statistics are not frozen".into()));
        }
        if cols != self.width() {
            return Err(Error::Dimension(format!(
                "normalizer width {} does not match {cols} columns",
                self.width()
            )));
        }
        Ok(())
    }

    /// `(x - mean) / std`, using the current statistics whether or not they
    /// are frozen.
    pub fn apply(&self, x: &Matrix) -> Matrix {
        let std = self.std();
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Normalizes with frozen statistics.
    pub fn normalize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x.cols())?;
        Ok(self.apply(x))
    }

    /// Inverse of [`Normalizer::apply`].
    pub fn invert(&self, x: &Matrix) -> Matrix {
        let std = self.std();
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&std) {
                *v = *v * s + m;
            }
        }
        out
    }

    /// Denormalizes with frozen statistics.
    pub fn denormalize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x.cols())?;
        Ok(self.invert(x))
    }
}
