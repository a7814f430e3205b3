//! Green's function of the linear advection-diffusion equation and the
//! integro-difference (VAR) forecaster built from it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Advection velocity `gamma1` and diffusivity `gamma2 > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl GammaParams {
    fn check(&self, tau: f64) -> Result<()> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::DegenerateKernel(format!("elapsed time {tau} must be positive")));
        }
        if !(self.gamma2.is_finite() && self.gamma2 > 0.0) || !self.gamma1.is_finite() {
            return Err(Error::DegenerateKernel(format!(
                "gamma = ({}, {}) needs a positive diffusivity",
                self.gamma1, self.gamma2
            )));
        }
        Ok(())
    }
}

/// `(4 pi g2 tau)^{-d/2} exp(-|r - tau g1 1|^2 / (4 g2 tau))`, with `d = r.len()`.
pub fn green_kernel(r: &[f64], tau: f64, p: GammaParams) -> Result<f64> {
    p.check(tau)?;
    if r.is_empty() {
        return Err(Error::Shape("offset vector is empty".into()));
    }
    let d = r.len() as f64;
    let shift = tau * p.gamma1;
    let dist2: f64 = r.iter().map(|x| (x - shift).powi(2)).sum();
    let spread = 4.0 * p.gamma2 * tau;
    Ok((PI * spread).powf(-d / 2.0) * (-dist2 / spread).exp())
}

/// The one-dimensional kernel from its Fourier representation,
/// `(1/2pi) int exp(i k r - i g1 tau k - g2 tau k^2) dk`, by composite
/// Simpson quadrature on `|k| <= 8 / sqrt(g2 tau)`.
pub fn green_kernel_quadrature(r: f64, tau: f64, p: GammaParams) -> Result<f64> {
    p.check(tau)?;
    let a = p.gamma2 * tau;
    let x = r - p.gamma1 * tau;
    let kmax = 8.0 / a.sqrt();
    // The imaginary part integrates to zero; only cos survives.
    let f = |k: f64| (k * x).cos() * (-a * k * k).exp();
    let simpson = |intervals: usize| {
        let h = 2.0 * kmax / intervals as f64;
        let mut sum = f(-kmax) + f(kmax);
        for i in 1..intervals {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(-kmax + i as f64 * h);
        }
        sum * h / 3.0 / (2.0 * PI)
    };
    let mut intervals = 4096;
    let mut prev = simpson(intervals);
    let mut change = f64::INFINITY;
    for _ in 0..10 {
        intervals *= 2;
        let next = simpson(intervals);
        change = (next - prev).abs();
        prev = next;
        if change < 1e-9 {
            return Ok(next);
        }
    }
    Err(Error::Quadrature(change))
}

/// Discretized IDE operator on `n` equispaced points of the periodic unit
/// interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagator {
    n: usize,
    matrix: Vec<f64>,
    h_delta: f64,
    spacing: f64,
}

/// Sum of the kernel over all periodic images of offset `x` on the unit circle.
fn wrapped_kernel(x: f64, tau: f64, p: GammaParams) -> f64 {
    let spread = 4.0 * p.gamma2 * tau;
    let norm = (PI * spread).powf(-0.5);
    let centre = x - tau * p.gamma1;
    // exp(-z^2 / spread) < 1e-300 once |z| > 26.3 sqrt(spread).
    let reach = (26.3 * spread.sqrt()).ceil() as i64 + 1;
    let base = centre.round() as i64;
    (base - reach..=base + reach)
        .map(|m| {
            let z = centre - m as f64;
            (-z * z / spread).exp()
        })
        .sum::<f64>()
        * norm
}

pub const DEFAULT_ROW_SUM_TOL: f64 = 1e-2;

pub fn build_propagator(n: usize, h_delta: f64, p: GammaParams) -> Result<Propagator> {
    p.check(h_delta)?;
    if n == 0 {
        return Err(Error::Shape("empty grid".into()));
    }
    let spacing = 1.0 / n as f64;
    let std = (2.0 * p.gamma2 * h_delta).sqrt();
    if std < 2.0 * spacing {
        return Err(Error::UnderResolvedKernel { std, spacing });
    }
    // Entry (i, j) depends only on (i - j) mod n.
    let column: Vec<f64> = (0..n)
        .map(|k| wrapped_kernel(k as f64 * spacing, h_delta, p) * spacing)
        .collect();
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            matrix[i * n + j] = column[(i + n - j) % n];
        }
    }
    let prop = Propagator {
        n,
        matrix,
        h_delta,
        spacing,
    };
    let defect = prop.row_sum_defect();
    if defect > DEFAULT_ROW_SUM_TOL {
        return Err(Error::UnderResolvedKernel { std, spacing });
    }
    Ok(prop)
}

impl Propagator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h_delta(&self) -> f64 {
        self.h_delta
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    /// `max_i |sum_j G_ij - 1|`.
    pub fn row_sum_defect(&self) -> f64 {
        self.matrix
            .chunks_exact(self.n)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Noise-free IDE mean map `G y`.
pub fn ide_forecast(y: &[f64], prop: &Propagator) -> Result<Vec<f64>> {
    if y.len() != prop.n {
        return Err(Error::Shape(format!(
            "field has {} points, propagator is {}x{}",
            y.len(),
            prop.n,
            prop.n
        )));
    }
    Ok(prop
        .matrix
        .chunks_exact(prop.n)
        .map(|row| row.iter().zip(y).map(|(g, v)| g * v).sum())
        .collect())
}
