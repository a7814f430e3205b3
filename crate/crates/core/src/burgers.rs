//! Training data: the viscous Burgers equation on the periodic unit interval,
//! solved by explicit Euler steps from wrapped-Gaussian-process initial
//! conditions.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};
use crate::spectral::{FftPlan, RealTensor};
use crate::special::{bessel_k, gamma};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternConfig {
    pub variance: f64,
    pub lengthscale: f64,
    pub nu: f64,
}

impl Default for MaternConfig {
    fn default() -> Self {
        MaternConfig {
            variance: 1.0,
            lengthscale: 1.0,
            nu: 2.0,
        }
    }
}

impl MaternConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ic.variance", self.variance),
            ("ic.lengthscale", self.lengthscale),
            ("ic.nu", self.nu),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Matérn covariance as a function of distance.
    pub fn covariance_at(&self, dist: f64) -> Result<f64> {
        if !dist.is_finite() || dist < 0.0 {
            return Err(Error::NonFinite(format!("distance {dist}")));
        }
        let x = (2.0 * self.nu).sqrt() * dist / self.lengthscale;
        if x < 1e-12 {
            return Ok(self.variance);
        }
        let scale = 2f64.powf(1.0 - self.nu) / gamma(self.nu);
        Ok(self.variance * scale * x.powf(self.nu) * bessel_k(self.nu, x)?)
    }
}

/// Chord length between two positions on the unit circle parametrized by
/// arc fraction in `[0, 1)`.
pub fn chordal_distance(s: f64, s_prime: f64) -> f64 {
    2.0 * (PI * (s - s_prime).abs()).sin().abs()
}

pub fn matern_chordal_cov(s: f64, s_prime: f64, cfg: &MaternConfig) -> Result<f64> {
    if !(s.is_finite() && s_prime.is_finite()) {
        return Err(Error::NonFinite(format!("positions ({s}, {s_prime})")));
    }
    cfg.covariance_at(chordal_distance(s, s_prime))
}

/// Draw one zero-mean wrapped GP path on `n` equispaced points by circulant
/// diagonalization of the (exactly circulant) covariance matrix.
pub fn sample_initial_condition(cfg: &MaternConfig, n: usize, stream: &mut Stream) -> Result<Vec<f64>> {
    cfg.validate()?;
    let plan = FftPlan::new(n)?;
    let mut row = (0..n)
        .map(|j| matern_chordal_cov(0.0, j as f64 / n as f64, cfg).map(|v| Complex64::new(v, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    plan.forward(&mut row)?;
    let max_eig = row.iter().map(|v| v.re).fold(f64::MIN, f64::max);
    let min_eig = row.iter().map(|v| v.re).fold(f64::MAX, f64::min);
    if min_eig < -1e-8 * max_eig {
        return Err(Error::NotPsd { min_eig, max_eig });
    }
    // Re(ifft(sqrt(n * lambda) * (a + ib))) has covariance C for iid
    // standard normal a, b.
    let mut spec: Vec<Complex64> = row
        .iter()
        .map(|lam| {
            let amp = (n as f64 * lam.re.max(0.0)).sqrt();
            let xi = Complex64::new(stream.normal(), stream.normal());
            xi * amp
        })
        .collect();
    plan.inverse(&mut spec)?;
    Ok(spec.into_iter().map(|c| c.re).collect())
}

/// Discretization of the nonlinear advection term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Advection {
    /// Backward difference of the flux `u^2 / 2`; conserves `sum(u)` exactly.
    #[default]
    Conservative,
    /// Backward difference in the form `u_i (u_i - u_{i-1})`.
    Advective,
}

/// One explicit Euler step with periodic wrap-around.
pub fn burgers_step(u: &[f64], gamma: f64, dt: f64, ds: f64, form: Advection) -> Result<Vec<f64>> {
    let mut out = vec![0.0; u.len()];
    step_into(u, &mut out, gamma, dt, ds, form);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Diverged { step: 0 })
    }
}

fn step_into(u: &[f64], out: &mut [f64], gamma: f64, dt: f64, ds: f64, form: Advection) {
    let n = u.len();
    let adv = dt / ds;
    let diff = gamma * dt / (ds * ds);
    for i in 0..n {
        let left = u[(i + n - 1) % n];
        let right = u[(i + 1) % n];
        let c = u[i];
        let transport = match form {
            Advection::Conservative => 0.5 * (c * c - left * left),
            Advection::Advective => c * (c - left),
        };
        out[i] = c - adv * transport + diff * (right - 2.0 * c + left);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaMode {
    RandomUniform { lo: f64, hi: f64 },
    Fixed { value: f64 },
}

impl GammaMode {
    pub fn max(&self) -> f64 {
        match *self {
            GammaMode::RandomUniform { hi, .. } => hi,
            GammaMode::Fixed { value } => value,
        }
    }

    fn draw(&self, stream: &mut Stream) -> f64 {
        match *self {
            GammaMode::RandomUniform { lo, hi } => stream.uniform_range(lo, hi),
            GammaMode::Fixed { value } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurgersConfig {
    pub n: usize,
    /// Simulator step; chosen from the stability bounds when absent.
    pub dt_sim: Option<f64>,
    pub t_model: usize,
    pub delta: f64,
    pub gamma_mode: GammaMode,
    pub ic: MaternConfig,
    pub advection: Advection,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        BurgersConfig {
            n: 256,
            dt_sim: None,
            t_model: 10,
            delta: 0.1,
            gamma_mode: GammaMode::Fixed { value: 0.4 },
            ic: MaternConfig::default(),
            advection: Advection::Conservative,
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 2 || self.n > 1 << 11 {
            return Err(Error::Config(format!(
                "grid.n must be a power of two in 2..=2048, got {}",
                self.n
            )));
        }
        if self.t_model == 0 {
            return Err(Error::Config("data.T must be at least 1".into()));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!("data.delta must be positive, got {}", self.delta)));
        }
        match self.gamma_mode {
            GammaMode::RandomUniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                    return Err(Error::Config(format!("gamma range [{lo}, {hi}] is invalid")));
                }
            }
            GammaMode::Fixed { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::Config(format!("fixed gamma {value} is invalid")));
                }
            }
        }
        self.ic.validate()?;
        if let Some(dt) = self.dt_sim {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::Config(format!("data.dt_sim must be positive, got {dt}")));
            }
            let ratio = self.delta / dt;
            if (ratio - ratio.round()).abs() > 1e-9 * ratio {
                return Err(Error::Config(format!(
                    "data.delta = {} is not an integer multiple of dt_sim = {dt}",
                    self.delta
                )));
            }
            let ds = self.ds();
            if self.gamma_mode.max() * dt / (ds * ds) > 0.5 {
                return Err(Error::Config(format!(
                    "dt_sim = {dt} violates the diffusion bound gamma*dt/ds^2 <= 1/2"
                )));
            }
        }
        Ok(())
    }

    pub fn ds(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Number of simulator steps per model frame for initial state `u0`.
    fn combined_rate(&self, max_u: f64) -> f64 {
        let ds = self.ds();
        2.0 * self.gamma_mode.max() / (ds * ds) + (max_u + 1e-6) / ds
    }

    pub fn steps_per_frame(&self, u0: &[f64]) -> Result<usize> {
        let ds = self.ds();
        let max_u = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        match self.dt_sim {
            Some(dt) => {
                if dt > ds / (max_u + 1e-6) || dt * self.combined_rate(max_u) > 1.0 {
                    return Err(Error::Config(format!(
                        "dt_sim = {dt} violates the advective bound for max|u0| = {max_u:.3}"
                    )));
                }
                Ok((self.delta / dt).round() as usize)
            }
            None => {
                let mut dt_max = 0.25 * ds / (max_u + 1e-6);
                let g = self.gamma_mode.max();
                if g > 0.0 {
                    dt_max = dt_max.min(0.5 * ds * ds / g);
                }
                // The separate bounds allow a centre coefficient
                // 1 - dt (2 g / ds^2 + |u| / ds) below zero, which makes the
                // highest mode grow; keep it comfortably positive.
                dt_max = dt_max.min(0.9 / self.combined_rate(max_u));
                Ok((self.delta / dt_max).ceil().max(1.0) as usize)
            }
        }
    }
}

/// One simulated realization: `values` is `T x n`, row `k` is the state at
/// time `(k + 1) * delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSeries {
    pub values: RealTensor,
    pub gamma: f64,
    pub delta: f64,
    pub n: usize,
}

impl FieldSeries {
    pub fn t_len(&self) -> usize {
        self.values.shape()[0]
    }

    /// Frame `k`, zero-based.
    pub fn frame(&self, k: usize) -> &[f64] {
        &self.values.data()[k * self.n..(k + 1) * self.n]
    }
}

pub fn momentum(u: &[f64], ds: f64) -> f64 {
    u.iter().sum::<f64>() * ds
}

pub fn energy(u: &[f64], ds: f64) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>() * ds
}

/// Run the simulator from a given initial state for `cfg.t_model` frames.
pub fn simulate_from(cfg: &BurgersConfig, u0: Vec<f64>, gamma: f64) -> Result<FieldSeries> {
    cfg.validate()?;
    if u0.len() != cfg.n {
        return Err(Error::Shape(format!("initial state has {} points, grid has {}", u0.len(), cfg.n)));
    }
    let steps = cfg.steps_per_frame(&u0)?;
    let dt = cfg.delta / steps as f64;
    let ds = cfg.ds();
    let mut u = u0;
    let mut next = vec![0.0; cfg.n];
    let mut values = Vec::with_capacity(cfg.t_model * cfg.n);
    let mut step = 0;
    for _ in 0..cfg.t_model {
        for _ in 0..steps {
            step_into(&u, &mut next, gamma, dt, ds, cfg.advection);
            step += 1;
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged { step });
            }
            std::mem::swap(&mut u, &mut next);
        }
        values.extend_from_slice(&u);
    }
    Ok(FieldSeries {
        values: RealTensor::new(vec![cfg.t_model, cfg.n], values)?,
        gamma,
        delta: cfg.delta,
        n: cfg.n,
    })
}

/// Simulate instance `index` of the run seeded by `seed`.
pub fn simulate_instance(cfg: &BurgersConfig, seed: u64, index: u64) -> Result<FieldSeries> {
    cfg.validate()?;
    let gamma = cfg.gamma_mode.draw(&mut Stream::new(seed, Purpose::Gamma, index));
    let u0 = sample_initial_condition(&cfg.ic, cfg.n, &mut Stream::new(seed, Purpose::InitialCondition, index))?;
    simulate_from(cfg, u0, gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: BurgersConfig,
    pub seed: u64,
    pub split: Split,
    pub series: Vec<FieldSeries>,
}

impl Dataset {
    pub fn train(&self) -> &[FieldSeries] {
        &self.series[..self.split.train]
    }

    pub fn test(&self) -> &[FieldSeries] {
        &self.series[self.split.train..]
    }
}

/// Simulate `n_instances` independent realizations; the last `n_test` form
/// the test split. Instances are generated in parallel but each depends only
/// on `(seed, index)`.
pub fn generate_dataset(cfg: &BurgersConfig, n_instances: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if n_instances == 0 {
        return Err(Error::Config("data.instances must be at least 1".into()));
    }
    if n_test > n_instances {
        return Err(Error::Config(format!(
            "data.test_instances = {n_test} exceeds data.instances = {n_instances}"
        )));
    }
    let series = (0..n_instances as u64)
        .into_par_iter()
        .map(|i| simulate_instance(cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        split: Split {
            train: n_instances - n_test,
            test: n_test,
        },
        series,
    })
}
