//! Shape-preserving cubic interpolation on a strictly increasing grid.

use crate::error::{Error, Result};

/// Piecewise-cubic Hermite interpolant with Fritsch-Carlson limited slopes.
///
/// For monotone node values the interpolant is monotone on every interval
/// (no overshoot), which is what makes it safe to invert by bisection.
/// Outside the table it continues linearly with the boundary slope.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
}

impl MonotoneCubic {
    /// Builds the interpolant. `x` must be strictly increasing and both
    /// arrays finite and of equal length >= 2.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::config("interpolation: node/value length mismatch"));
        }
        if x.len() < 2 {
            return Err(Error::config("interpolation: need at least two nodes"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::config("interpolation: non-finite node data"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("interpolation: grid not strictly increasing"));
        }
        let slope = fritsch_carlson_slopes(&x, &y);
        Ok(MonotoneCubic { x, y, slope })
    }

    /// Interpolated value; linear continuation outside the table.
    pub fn eval(&self, at: f64) -> f64 {
        let n = self.x.len();
        if at <= self.x[0] {
            return self.y[0] + self.slope[0] * (at - self.x[0]);
        }
        if at >= self.x[n - 1] {
            return self.y[n - 1] + self.slope[n - 1] * (at - self.x[n - 1]);
        }
        let i = self.interval(at);
        let h = self.x[i + 1] - self.x[i];
        let s = (at - self.x[i]) / h;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (m0, m1) = (self.slope[i] * h, self.slope[i + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + m0 * (s3 - 2.0 * s2 + s)
            + y1 * (-2.0 * s3 + 3.0 * s2)
            + m1 * (s3 - s2)
    }

    /// Derivative of the interpolant; boundary slope outside the table.
    pub fn derivative(&self, at: f64) -> f64 {
        let n = self.x.len();
        if at <= self.x[0] {
            return self.slope[0];
        }
        if at >= self.x[n - 1] {
            return self.slope[n - 1];
        }
        let i = self.interval(at);
        let h = self.x[i + 1] - self.x[i];
        let s = (at - self.x[i]) / h;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (m0, m1) = (self.slope[i] * h, self.slope[i + 1] * h);
        let s2 = s * s;
        let d = y0 * (6.0 * s2 - 6.0 * s)
            + m0 * (3.0 * s2 - 4.0 * s + 1.0)
            + y1 * (-6.0 * s2 + 6.0 * s)
            + m1 * (3.0 * s2 - 2.0 * s);
        d / h
    }

    fn interval(&self, at: f64) -> usize {
        // Largest i with x[i] <= at, clamped to the last interior interval.
        match self.x.binary_search_by(|v| v.partial_cmp(&at).unwrap()) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i - 1,
        }
    }
}

/// Limited node slopes after Fritsch and Carlson: harmonic weighting of the
/// adjacent secants, zero wherever the secants change sign or vanish, and
/// three-point boundary estimates clipped to preserve monotonicity.
fn fritsch_carlson_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    m[0] = edge_slope(h[0], h.get(1).copied().unwrap_or(h[0]), delta[0], delta.get(1).copied().unwrap_or(delta[0]));
    m[n - 1] = edge_slope(
        h[n - 2],
        if n > 2 { h[n - 3] } else { h[n - 2] },
        delta[n - 2],
        if n > 2 { delta[n - 3] } else { delta[n - 2] },
    );
    m
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 < 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}
