//! Heteroscedastic Gaussian error model for the forecast residuals.
//!
//! The standard deviation at each grid point comes from a one-hidden-layer
//! network of the current field; spatial correlation is squared-exponential
//! in the periodic distance with range `alpha_r`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fno::{Fno, FnoParams, HistoryWindow};
use crate::linalg::{cholesky, cholesky_inverse, cholesky_logdet, cholesky_solve};
use crate::rng::{Purpose, Stream};
use crate::special::normal_quantile;

pub const SIGMA_FLOOR: f64 = 1e-4;
pub const DEFAULT_HIDDEN: usize = 64;
/// Diagonal jitter relative to `mean(sigma^2)`.
pub const JITTER: f64 = 1e-6;
pub const MAX_JITTER_RETRIES: u32 = 3;

/// Parameters of the sigma network and the correlation range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovParams {
    pub n: usize,
    pub hidden: usize,
    /// `hidden x n`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `n x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub alpha_r: f64,
}

impl CovParams {
    pub fn zeros(n: usize, hidden: usize, alpha_r: f64) -> Self {
        CovParams {
            n,
            hidden,
            w1: vec![0.0; hidden * n],
            b1: vec![0.0; hidden],
            w2: vec![0.0; n * hidden],
            b2: vec![0.0; n],
            alpha_r,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(n: usize, hidden: usize, alpha_r: f64, seed: u64) -> Result<Self> {
        if n == 0 || hidden == 0 {
            return Err(Error::Config("cov.hidden and grid.n must be positive".into()));
        }
        if !(alpha_r.is_finite() && alpha_r > 0.0) {
            return Err(Error::Config(format!("cov.alpha_r_init = {alpha_r} must be positive")));
        }
        let mut p = CovParams::zeros(n, hidden, alpha_r);
        let mut s = Stream::new(seed, Purpose::CovInit, 0);
        let limit = (6.0 / (n + hidden) as f64).sqrt();
        for w in p.w1.iter_mut().chain(p.w2.iter_mut()) {
            *w = s.uniform_range(-limit, limit);
        }
        Ok(p)
    }

    pub fn num_scalars(&self) -> usize {
        2 * self.hidden * self.n + self.hidden + self.n + 1
    }

    /// `(w1, b1, w2, b2, alpha_r)` concatenated.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.extend_from_slice(&self.b2);
        out.push(self.alpha_r);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!(
                "flat covariance vector has {} entries, expected {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let (hn, h, n) = (self.hidden * self.n, self.hidden, self.n);
        self.w1.copy_from_slice(&flat[..hn]);
        self.b1.copy_from_slice(&flat[hn..hn + h]);
        self.w2.copy_from_slice(&flat[hn + h..2 * hn + h]);
        self.b2.copy_from_slice(&flat[2 * hn + h..2 * hn + h + n]);
        self.alpha_r = flat[2 * hn + h + n];
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        let (h, n) = (self.hidden, self.n);
        if self.w1.len() != h * n || self.b1.len() != h || self.w2.len() != n * h || self.b2.len() != n {
            return Err(Error::Shape("covariance parameters have inconsistent shapes".into()));
        }
        if !(self.alpha_r.is_finite() && self.alpha_r > 0.0) {
            return Err(Error::NonFinite(format!("alpha_r = {}", self.alpha_r)));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariance parameters".into()));
        }
        Ok(())
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Hidden activations and output pre-activations of the sigma network.
struct SigmaTrace {
    hidden: Vec<f64>,
    z: Vec<f64>,
}

fn stddev_forward(y: &[f64], a: &CovParams) -> Result<(Vec<f64>, SigmaTrace)> {
    a.check()?;
    if y.len() != a.n {
        return Err(Error::Shape(format!("field has {} points, sigma network expects {}", y.len(), a.n)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sigma network input".into()));
    }
    let (h, n) = (a.hidden, a.n);
    let hidden: Vec<f64> = (0..h)
        .map(|k| {
            let row = &a.w1[k * n..(k + 1) * n];
            (row.iter().zip(y).map(|(w, v)| w * v).sum::<f64>() + a.b1[k]).tanh()
        })
        .collect();
    let z: Vec<f64> = (0..n)
        .map(|i| {
            let row = &a.w2[i * h..(i + 1) * h];
            row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + a.b2[i]
        })
        .collect();
    let sigma: Vec<f64> = z.iter().map(|&v| softplus(v) + SIGMA_FLOOR).collect();
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sigma network output".into()));
    }
    Ok((sigma, SigmaTrace { hidden, z }))
}

/// `softplus(W2 tanh(W1 y + b1) + b2) + SIGMA_FLOOR`.
pub fn stddev_field(y: &[f64], a: &CovParams) -> Result<Vec<f64>> {
    Ok(stddev_forward(y, a)?.0)
}

/// Correlation at grid offset `k = 0..n` and its derivative in `alpha_r`.
///
/// The squared-exponential function is summed over all periodic images and
/// normalized to one at zero offset. The plain minimum-image version is not
/// positive semi-definite on the circle once `alpha_r` exceeds about 0.12;
/// the wrapped one is, and the two agree to `exp(-1 / (8 alpha_r^2))`.
fn correlation_row(n: usize, alpha_r: f64) -> (Vec<f64>, Vec<f64>) {
    let a2 = alpha_r * alpha_r;
    let a3 = a2 * alpha_r;
    // exp(-x^2 / (2 a^2)) underflows once |x| > 38.6 a.
    let reach = (38.6 * alpha_r).ceil() as i64 + 1;
    let sums = |d: f64| {
        let (mut val, mut der) = (0.0, 0.0);
        for m in -reach..=reach {
            let x = d + m as f64;
            let e = (-x * x / (2.0 * a2)).exp();
            val += e;
            der += e * x * x / a3;
        }
        (val, der)
    };
    let (z, dz) = sums(0.0);
    let mut rho = Vec::with_capacity(n);
    let mut drho = Vec::with_capacity(n);
    for k in 0..n {
        let (v, dv) = sums(k as f64 / n as f64);
        rho.push(v / z);
        drho.push((dv * z - v * dz) / (z * z));
    }
    (rho, drho)
}

fn covariance_with(sigma: &[f64], rho: &[f64], jitter: f64) -> Vec<f64> {
    let n = sigma.len();
    let mean_var = sigma.iter().map(|s| s * s).sum::<f64>() / n as f64;
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = sigma[i] * sigma[j] * rho[i - j];
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
        cov[i * n + i] += jitter * mean_var;
    }
    cov
}

/// `Sigma_ij = sigma_i sigma_j rho(s_i - s_j)` with the wrapped
/// squared-exponential correlation of range `alpha_r`, plus
/// `JITTER * mean(sigma^2)` on the diagonal.
pub fn build_covariance(sigma: &[f64], alpha_r: f64) -> Result<Vec<f64>> {
    if sigma.is_empty() {
        return Err(Error::Shape("empty sigma field".into()));
    }
    if sigma.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
        return Err(Error::NonFinite("sigma must be finite and positive".into()));
    }
    if !(alpha_r.is_finite() && alpha_r > 0.0) {
        return Err(Error::NonFinite(format!("alpha_r = {alpha_r}")));
    }
    let (rho, _) = correlation_row(sigma.len(), alpha_r);
    Ok(covariance_with(sigma, &rho, JITTER))
}

/// Factorizes `cov`, adding diagonal jitter `base * 10^k` for `k = 1..=3` on
/// failure. Returns the factor and the number of escalations used.
fn factor_escalating(cov: &[f64], n: usize, base: f64) -> Result<(Vec<f64>, u32)> {
    if let Some(l) = cholesky(cov, n) {
        return Ok((l, 0));
    }
    let mut work = cov.to_vec();
    let mut added = 0.0;
    for k in 1..=MAX_JITTER_RETRIES {
        let target = base * 10f64.powi(k as i32);
        for i in 0..n {
            work[i * n + i] += target - added;
        }
        added = target;
        if let Some(l) = cholesky(&work, n) {
            return Ok((l, k));
        }
    }
    Err(Error::NotPositiveDefinite)
}

fn check_vectors(y: &[f64], mu: &[f64], n: usize) -> Result<()> {
    if y.len() != n || mu.len() != n {
        return Err(Error::Shape(format!(
            "observation ({}) and mean ({}) must match the covariance size {n}",
            y.len(),
            mu.len()
        )));
    }
    Ok(())
}

/// `(1/2) [r^T Sigma^{-1} r + log det Sigma + n log 2 pi]`, `r = y - mu`.
pub fn gaussian_nll(y: &[f64], mu: &[f64], cov: &[f64]) -> Result<f64> {
    let n = y.len();
    if cov.len() != n * n {
        return Err(Error::Shape(format!("covariance has {} entries for n = {n}", cov.len())));
    }
    check_vectors(y, mu, n)?;
    let mean_diag = (0..n).map(|i| cov[i * n + i]).sum::<f64>() / n as f64;
    let (l, _) = factor_escalating(cov, n, JITTER * mean_diag)?;
    let r: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut z = r;
    crate::linalg::solve_lower(&l, n, &mut z);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok(0.5 * (quad + cholesky_logdet(&l, n) + n as f64 * (2.0 * PI).ln()))
}

/// Value and gradients of the negative log-likelihood of `y` given the mean
/// `mu` and the covariance generated from the conditioning field `y_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct NllGradients {
    pub value: f64,
    pub mu: Vec<f64>,
    /// Gradient shaped like the parameters, `alpha_r` included.
    pub cov: CovParams,
}

/// The NLL value for the full model, escalating jitter as needed.
pub fn nll_value(y: &[f64], mu: &[f64], y_k: &[f64], a: &CovParams) -> Result<f64> {
    let sigma = stddev_field(y_k, a)?;
    check_vectors(y, mu, sigma.len())?;
    let (value, ..) = nll_core(y, mu, &sigma, a.alpha_r, false)?;
    Ok(value)
}

/// Returns the value and, when requested, `(dNLL/dmu, dNLL/dsigma, dNLL/dalpha_r)`.
#[allow(clippy::type_complexity)]
fn nll_core(
    y: &[f64],
    mu: &[f64],
    sigma: &[f64],
    alpha_r: f64,
    grads: bool,
) -> Result<(f64, Option<(Vec<f64>, Vec<f64>, f64)>)> {
    let n = sigma.len();
    let (rho, drho) = correlation_row(n, alpha_r);
    let mut jitter = JITTER;
    let mut cov = covariance_with(sigma, &rho, jitter);
    let mut l = cholesky(&cov, n);
    let mut tries = 0;
    while l.is_none() {
        if tries == MAX_JITTER_RETRIES {
            return Err(Error::NotPositiveDefinite);
        }
        tries += 1;
        jitter *= 10.0;
        cov = covariance_with(sigma, &rho, jitter);
        l = cholesky(&cov, n);
    }
    let l = l.expect("factor");
    let r: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    let alpha = cholesky_solve(&l, n, &r);
    let quad: f64 = r.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let value = 0.5 * (quad + cholesky_logdet(&l, n) + n as f64 * (2.0 * PI).ln());
    if !value.is_finite() {
        return Err(Error::NonFinite("negative log-likelihood".into()));
    }
    if !grads {
        return Ok((value, None));
    }
    // G = (Sigma^{-1} - alpha alpha^T) / 2
    let mut g = cholesky_inverse(&l, n);
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = 0.5 * (g[i * n + j] - alpha[i] * alpha[j]);
        }
    }
    let trace_g: f64 = (0..n).map(|i| g[i * n + i]).sum();
    let mut d_sigma = vec![0.0; n];
    let mut d_alpha = 0.0;
    for k in 0..n {
        let (mut acc, mut acc_alpha) = (0.0, 0.0);
        for j in 0..n {
            let off = k.abs_diff(j);
            acc += g[k * n + j] * sigma[j] * rho[off];
            acc_alpha += g[k * n + j] * sigma[j] * drho[off];
        }
        d_alpha += sigma[k] * acc_alpha;
        d_sigma[k] = 2.0 * acc + jitter * 2.0 * sigma[k] / n as f64 * trace_g;
    }
    let d_mu = alpha.iter().map(|v| -v).collect();
    Ok((value, Some((d_mu, d_sigma, d_alpha))))
}

/// Reverse pass through the covariance and the sigma network.
pub fn nll_gradients(y: &[f64], mu: &[f64], y_k: &[f64], a: &CovParams) -> Result<NllGradients> {
    let (sigma, trace) = stddev_forward(y_k, a)?;
    check_vectors(y, mu, sigma.len())?;
    let (value, grads) = nll_core(y, mu, &sigma, a.alpha_r, true)?;
    let (d_mu, d_sigma, d_alpha) = grads.expect("gradients requested");
    let (h, n) = (a.hidden, a.n);
    let mut out = CovParams::zeros(n, h, d_alpha);
    let dz: Vec<f64> = d_sigma.iter().zip(&trace.z).map(|(g, &z)| g * sigmoid(z)).collect();
    let mut dh = vec![0.0; h];
    for i in 0..n {
        out.b2[i] = dz[i];
        for k in 0..h {
            out.w2[i * h + k] = dz[i] * trace.hidden[k];
            dh[k] += a.w2[i * h + k] * dz[i];
        }
    }
    for k in 0..h {
        let da = dh[k] * (1.0 - trace.hidden[k] * trace.hidden[k]);
        out.b1[k] = da;
        for (w, v) in out.w1[k * n..(k + 1) * n].iter_mut().zip(y_k) {
            *w = da * v;
        }
    }
    Ok(NllGradients {
        value,
        mu: d_mu,
        cov: out,
    })
}

/// Plug-in forecast distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastDist {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
    pub cov: Option<Vec<f64>>,
}

/// Mean from the network, covariance from the most recent frame.
pub fn forecast_distribution(
    net: &Fno,
    window: &HistoryWindow,
    theta: &FnoParams,
    alpha: &CovParams,
    keep_cov: bool,
) -> Result<ForecastDist> {
    let mean = net.forward(window, theta)?;
    let sd = stddev_field(window.last_frame(), alpha)?;
    let cov = build_covariance(&sd, alpha.alpha_r)?;
    let n = sd.len();
    let sigma = (0..n).map(|i| cov[i * n + i].sqrt()).collect();
    Ok(ForecastDist {
        mean,
        sigma,
        cov: keep_cov.then_some(cov),
    })
}

/// Pointwise `mean -/+ z sigma` with `z` the `(1 + level) / 2` normal quantile.
pub fn prediction_interval(dist: &ForecastDist, level: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("interval level {level} must lie in (0, 1)")));
    }
    if dist.mean.len() != dist.sigma.len() {
        return Err(Error::Shape("mean and sigma lengths differ".into()));
    }
    let z = normal_quantile(0.5 + level / 2.0)?;
    let lower = dist.mean.iter().zip(&dist.sigma).map(|(m, s)| m - z * s).collect();
    let upper = dist.mean.iter().zip(&dist.sigma).map(|(m, s)| m + z * s).collect();
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_gives_softplus_of_zero() {
        let a = CovParams::zeros(8, 4, 0.1);
        let s = stddev_field(&[0.3; 8], &a).unwrap();
        let want = 2f64.ln() + SIGMA_FLOOR;
        assert!(s.iter().all(|&v| (v - want).abs() < 1e-15));
        assert!((want - 0.6933).abs() < 1e-4);
    }

    #[test]
    fn covariance_diagonal_and_short_range() {
        let sigma = [0.5, 1.0, 2.0, 1.5];
        let cov = build_covariance(&sigma, 0.2).unwrap();
        let mean_var = (0.25 + 1.0 + 4.0 + 2.25) / 4.0;
        for i in 0..4 {
            assert!((cov[i * 4 + i] - (sigma[i] * sigma[i] + JITTER * mean_var)).abs() < 1e-15);
            for j in 0..4 {
                assert_eq!(cov[i * 4 + j], cov[j * 4 + i]);
            }
        }
        let tight = build_covariance(&sigma, 1e-9).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(tight[i * 4 + j] < 1e-12 * sigma[i] * sigma[j]);
                }
            }
        }
        assert!(build_covariance(&[1.0, 0.0], 0.1).is_err());
        assert!(build_covariance(&[1.0], -0.1).is_err());
    }

    #[test]
    fn nll_trivial_values() {
        let eye2 = [1.0, 0.0, 0.0, 1.0];
        let v = gaussian_nll(&[0.3, -0.2], &[0.3, -0.2], &eye2).unwrap();
        assert!((v - (2.0 * PI).ln()).abs() < 1e-15);
        assert!((v - 1.8379).abs() < 1e-4);
        let one = gaussian_nll(&[1.0], &[0.0], &[1.0]).unwrap();
        assert!((one - 1.4189).abs() < 1e-4);
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let bad = [1.0, 2.0, 2.0, 1.0];
        assert!(matches!(
            gaussian_nll(&[0.0, 0.0], &[0.0, 0.0], &bad),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn zero_residual_has_zero_mean_gradient() {
        let a = CovParams::init(8, 5, 0.1, 1).unwrap();
        let y = [0.1, 0.2, -0.3, 0.0, 0.5, 0.4, -0.1, 0.2];
        let g = nll_gradients(&y, &y, &y, &a).unwrap();
        assert!(g.mu.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interval_is_symmetric() {
        let dist = ForecastDist {
            mean: vec![0.0, 1.0],
            sigma: vec![1.0, 2.0],
            cov: None,
        };
        let (l, u) = prediction_interval(&dist, 0.95).unwrap();
        assert!((l[0] + 1.96).abs() < 1e-3 && (u[0] - 1.96).abs() < 1e-3);
        for i in 0..2 {
            assert!((u[i] - l[i] - 2.0 * 1.959_964 * dist.sigma[i]).abs() < 1e-5);
        }
        assert!(prediction_interval(&dist, 1.0).is_err());
    }
}
