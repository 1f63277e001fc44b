//! Uniform periodic grid on the circle `R / (L Z)`.
//!
//! Nodes sit at `x_i = i L / n`. Integrals against the normalized measure
//! (`l(M) = 1`) are arithmetic means of nodal values, which is the periodic
//! rectangle rule and spectrally accurate for smooth integrands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircleGrid {
    n: usize,
    perimeter: f64,
}

impl CircleGrid {
    pub fn new(n: usize, perimeter: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("grid_n", format!("need at least 2 cells, got {n}")));
        }
        if !(perimeter > 0.0 && perimeter.is_finite()) {
            return Err(Error::invalid("perimeter", format!("must be positive, got {perimeter}")));
        }
        Ok(Self { n, perimeter })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    /// Physical spacing `L / n`.
    pub fn dx(&self) -> f64 {
        self.perimeter / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// `int f dl` with `l` normalized.
    pub fn mean(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n);
        mean(values)
    }

    /// The same circle with twice as many cells.
    pub fn refined(&self) -> Self {
        Self {
            n: 2 * self.n,
            perimeter: self.perimeter,
        }
    }

    /// Centered derivative `(f_{i+1} - f_{i-1}) / (2 dx)` with periodic wrap.
    pub fn centered_derivative(&self, values: &[f64]) -> Vec<f64> {
        let n = self.n;
        let inv = 1.0 / (2.0 * self.dx());
        (0..n)
            .map(|i| (values[(i + 1) % n] - values[(i + n - 1) % n]) * inv)
            .collect()
    }
}

/// Compensated (Neumaier) mean.
pub fn mean(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    (sum + comp) / values.len() as f64
}
