use num_complex::Complex64;

use super::{FnoConfig, LIFT_INPUTS};
use crate::error::{Error, Result};
use crate::spectral::{hermitian_extend, FftPlan, RealTensor};

fn hidden_shape(v: &RealTensor, dv: usize) -> Result<(usize, usize)> {
    match v.shape() {
        &[c, t, n] if c == dv => Ok((t, n)),
        other => Err(Error::Shape(format!("hidden state shape {other:?}, expected [{dv}, T, n]"))),
    }
}

/// Pointwise lifting `v(s, t) = W (s, t, y(s, t)) + b` with raw coordinates
/// `s = j / n` and `t = k delta`.
pub fn lift(frames: &RealTensor, delta: f64, w: &[f64], b: &[f64]) -> Result<RealTensor> {
    let dv = b.len();
    if w.len() != dv * LIFT_INPUTS || frames.rank() != 2 {
        return Err(Error::Shape("lift weights or frames have the wrong shape".into()));
    }
    let (tt, n) = (frames.shape()[0], frames.shape()[1]);
    let y = frames.data();
    let mut out = vec![0.0; dv * tt * n];
    for c in 0..dv {
        let (ws, wt, wy) = (w[c * 3], w[c * 3 + 1], w[c * 3 + 2]);
        for t in 0..tt {
            let tc = t as f64 * delta;
            let row = &mut out[(c * tt + t) * n..(c * tt + t + 1) * n];
            for (s, slot) in row.iter_mut().enumerate() {
                *slot = ws * (s as f64 / n as f64) + wt * tc + wy * y[t * n + s] + b[c];
            }
        }
    }
    RealTensor::new(vec![dv, tt, n], out)
}

/// Gradients of [`lift`] with respect to `(w, b, frames)`.
pub fn lift_backward(
    frames: &RealTensor,
    delta: f64,
    w: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dv = w.len() / LIFT_INPUTS;
    let (tt, n) = (frames.shape()[0], frames.shape()[1]);
    let y = frames.data();
    let mut gw = vec![0.0; dv * LIFT_INPUTS];
    let mut gb = vec![0.0; dv];
    let mut gy = vec![0.0; tt * n];
    for c in 0..dv {
        let (mut acc_s, mut acc_t, mut acc_y, mut acc_b) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..tt {
            let tc = t as f64 * delta;
            let g = &grad_out[(c * tt + t) * n..(c * tt + t + 1) * n];
            for s in 0..n {
                let gv = g[s];
                acc_s += gv * (s as f64 / n as f64);
                acc_t += gv * tc;
                acc_y += gv * y[t * n + s];
                acc_b += gv;
                gy[t * n + s] += w[c * 3 + 2] * gv;
            }
        }
        gw[c * 3] = acc_s;
        gw[c * 3 + 1] = acc_t;
        gw[c * 3 + 2] = acc_y;
        gb[c] = acc_b;
    }
    (gw, gb, gy)
}

/// Pointwise `A v(x) + b` over the grid.
pub fn local_linear(v: &RealTensor, a: &[f64], b: &[f64]) -> Result<RealTensor> {
    let dv = b.len();
    if a.len() != dv * dv {
        return Err(Error::Shape(format!("matrix has {} entries for dv = {dv}", a.len())));
    }
    let (tt, n) = hidden_shape(v, dv)?;
    let mut out = vec![0.0; dv * tt * n];
    local_linear_into(v.data(), a, b, tt * n, &mut out);
    RealTensor::new(vec![dv, tt, n], out)
}

pub(crate) fn local_linear_into(v: &[f64], a: &[f64], b: &[f64], points: usize, out: &mut [f64]) {
    let dv = b.len();
    for o in 0..dv {
        let dst = &mut out[o * points..(o + 1) * points];
        dst.iter_mut().for_each(|d| *d = b[o]);
        for i in 0..dv {
            let coef = a[o * dv + i];
            let src = &v[i * points..(i + 1) * points];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += coef * s;
            }
        }
    }
}

/// Gradients of [`local_linear`] with respect to `(A, b, v)`.
pub fn local_linear_backward(v: &[f64], a: &[f64], grad_out: &[f64], dv: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let points = v.len() / dv;
    let mut ga = vec![0.0; dv * dv];
    let mut gb = vec![0.0; dv];
    let mut gv = vec![0.0; v.len()];
    for o in 0..dv {
        let g = &grad_out[o * points..(o + 1) * points];
        gb[o] = g.iter().sum();
        for i in 0..dv {
            let src = &v[i * points..(i + 1) * points];
            ga[o * dv + i] = g.iter().zip(src).map(|(x, y)| x * y).sum();
            let coef = a[o * dv + i];
            for (d, x) in gv[i * points..(i + 1) * points].iter_mut().zip(g) {
                *d += coef * x;
            }
        }
    }
    (ga, gb, gv)
}

/// Truncated Fourier-mode multiplication on the space-time grid.
///
/// Forward: zero-pad time to a power of two, real FFT over time keeping the
/// first `modes_time` frequencies, complex FFT over space keeping the lowest
/// `modes_space` non-negative and negative frequencies, mix channels with one
/// complex matrix per retained mode, then invert both transforms (time via
/// the conjugate-symmetric extension, real part) and crop.
#[derive(Clone, Debug)]
pub struct SpectralConv {
    dv: usize,
    frames: usize,
    n: usize,
    padded: usize,
    m1: usize,
    m2: usize,
    time_plan: FftPlan,
    space_plan: FftPlan,
}

impl SpectralConv {
    pub fn new(cfg: &FnoConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(SpectralConv {
            dv: cfg.dv,
            frames: cfg.frames(),
            n: cfg.n,
            padded: cfg.padded_time(),
            m1: cfg.modes_space,
            m2: cfg.modes_time,
            time_plan: FftPlan::new(cfg.padded_time())?,
            space_plan: FftPlan::new(cfg.n)?,
        })
    }

    /// Spatial frequency index stored in slot `j`.
    fn space_index(&self, j: usize) -> usize {
        if j < self.m1 {
            j
        } else {
            self.n - 2 * self.m1 + j
        }
    }

    fn weight_index(&self, o: usize, i: usize, j: usize, kt: usize) -> usize {
        ((o * self.dv + i) * 2 * self.m1 + j) * self.m2 + kt
    }

    fn modes_per_channel(&self) -> usize {
        self.m2 * 2 * self.m1
    }

    /// Weight on time mode `kt` in the conjugate-symmetric real inverse.
    fn c2r_weight(&self, kt: usize) -> f64 {
        if kt == 0 || (self.padded % 2 == 0 && kt == self.padded / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Forward transform of one channel, returning `[kt][j]` retained modes.
    fn analyze(&self, v: &[f64], out: &mut [Complex64]) {
        let (tt, n, p) = (self.frames, self.n, self.padded);
        let mut col = vec![Complex64::default(); p];
        let mut rows = vec![Complex64::default(); self.m2 * n];
        for s in 0..n {
            col.iter_mut().for_each(|c| *c = Complex64::default());
            for t in 0..tt {
                col[t].re = v[t * n + s];
            }
            self.time_plan.forward(&mut col).expect("plan length");
            for kt in 0..self.m2 {
                rows[kt * n + s] = col[kt];
            }
        }
        for kt in 0..self.m2 {
            let row = &mut rows[kt * n..(kt + 1) * n];
            self.space_plan.forward(row).expect("plan length");
            for j in 0..2 * self.m1 {
                out[kt * 2 * self.m1 + j] = row[self.space_index(j)];
            }
        }
    }

    /// Inverse of [`Self::analyze`] with all non-retained modes set to zero.
    fn synthesize(&self, modes: &[Complex64], out: &mut [f64]) {
        let (tt, n, p) = (self.frames, self.n, self.padded);
        let half = p / 2 + 1;
        let mut rows = vec![Complex64::default(); self.m2 * n];
        for kt in 0..self.m2 {
            let row = &mut rows[kt * n..(kt + 1) * n];
            for j in 0..2 * self.m1 {
                row[self.space_index(j)] = modes[kt * 2 * self.m1 + j];
            }
            self.space_plan.inverse(row).expect("plan length");
        }
        let mut spectrum = vec![Complex64::default(); half];
        for s in 0..n {
            spectrum.iter_mut().for_each(|c| *c = Complex64::default());
            for kt in 0..self.m2 {
                spectrum[kt] = rows[kt * n + s];
            }
            let mut col = hermitian_extend(&spectrum, p);
            self.time_plan.inverse(&mut col).expect("plan length");
            for t in 0..tt {
                out[t * n + s] = col[t].re;
            }
        }
    }

    /// Returns the output (`dv x frames x n`) and the retained input modes
    /// (`dv x modes_time x 2 modes_space`) needed by [`Self::backward`].
    pub fn forward(&self, v: &[f64], weights: &[Complex64]) -> (Vec<f64>, Vec<Complex64>) {
        let (dv, points) = (self.dv, self.frames * self.n);
        let per = self.modes_per_channel();
        let mut x = vec![Complex64::default(); dv * per];
        for i in 0..dv {
            self.analyze(&v[i * points..(i + 1) * points], &mut x[i * per..(i + 1) * per]);
        }
        let y = self.mix(&x, weights);
        let mut out = vec![0.0; dv * points];
        for o in 0..dv {
            self.synthesize(&y[o * per..(o + 1) * per], &mut out[o * points..(o + 1) * points]);
        }
        (out, x)
    }

    fn mix(&self, x: &[Complex64], weights: &[Complex64]) -> Vec<Complex64> {
        let (dv, per) = (self.dv, self.modes_per_channel());
        let mut y = vec![Complex64::default(); dv * per];
        for o in 0..dv {
            for i in 0..dv {
                for kt in 0..self.m2 {
                    for j in 0..2 * self.m1 {
                        let m = kt * 2 * self.m1 + j;
                        y[o * per + m] += weights[self.weight_index(o, i, j, kt)] * x[i * per + m];
                    }
                }
            }
        }
        y
    }

    /// Adjoint pass: gradients with respect to the input and the weights.
    pub fn backward(&self, modes: &[Complex64], weights: &[Complex64], grad_out: &[f64]) -> (Vec<f64>, Vec<Complex64>) {
        let (dv, tt, n, p) = (self.dv, self.frames, self.n, self.padded);
        let points = tt * n;
        let per = self.modes_per_channel();

        // Adjoint of the real inverse over time, then of the inverse over space.
        let mut gy = vec![Complex64::default(); dv * per];
        let mut col = vec![Complex64::default(); p];
        let mut rows = vec![Complex64::default(); self.m2 * n];
        for o in 0..dv {
            let g = &grad_out[o * points..(o + 1) * points];
            for s in 0..n {
                col.iter_mut().for_each(|c| *c = Complex64::default());
                for t in 0..tt {
                    col[t].re = g[t * n + s];
                }
                self.time_plan.forward(&mut col).expect("plan length");
                for kt in 0..self.m2 {
                    rows[kt * n + s] = col[kt] * (self.c2r_weight(kt) / p as f64);
                }
            }
            for kt in 0..self.m2 {
                let row = &mut rows[kt * n..(kt + 1) * n];
                self.space_plan.forward(row).expect("plan length");
                for j in 0..2 * self.m1 {
                    gy[o * per + kt * 2 * self.m1 + j] = row[self.space_index(j)] / n as f64;
                }
            }
        }

        // Channel mixing.
        let mut gw = vec![Complex64::default(); weights.len()];
        let mut gx = vec![Complex64::default(); dv * per];
        for o in 0..dv {
            for i in 0..dv {
                for kt in 0..self.m2 {
                    for j in 0..2 * self.m1 {
                        let m = kt * 2 * self.m1 + j;
                        let widx = self.weight_index(o, i, j, kt);
                        let g = gy[o * per + m];
                        gw[widx] += g * modes[i * per + m].conj();
                        gx[i * per + m] += weights[widx].conj() * g;
                    }
                }
            }
        }

        // Adjoint of the forward transforms.
        let mut gv = vec![0.0; dv * points];
        for i in 0..dv {
            for kt in 0..self.m2 {
                let row = &mut rows[kt * n..(kt + 1) * n];
                row.iter_mut().for_each(|c| *c = Complex64::default());
                for j in 0..2 * self.m1 {
                    row[self.space_index(j)] = gx[i * per + kt * 2 * self.m1 + j];
                }
                self.space_plan.inverse(row).expect("plan length");
                row.iter_mut().for_each(|c| *c *= n as f64);
            }
            let dst = &mut gv[i * points..(i + 1) * points];
            for s in 0..n {
                col.iter_mut().for_each(|c| *c = Complex64::default());
                for kt in 0..self.m2 {
                    col[kt] = rows[kt * n + s];
                }
                self.time_plan.inverse(&mut col).expect("plan length");
                for t in 0..tt {
                    dst[t * n + s] = col[t].re * p as f64;
                }
            }
        }
        (gv, gw)
    }

    /// Tensor front end for [`Self::forward`].
    pub fn apply(&self, v: &RealTensor, weights: &[Complex64]) -> Result<RealTensor> {
        let (tt, n) = hidden_shape(v, self.dv)?;
        if tt != self.frames || n != self.n {
            return Err(Error::Shape(format!(
                "hidden grid {tt}x{n}, operator built for {}x{}",
                self.frames, self.n
            )));
        }
        if weights.len() != self.dv * self.dv * self.modes_per_channel() {
            return Err(Error::Shape("spectral weights have the wrong length".into()));
        }
        let (out, _) = self.forward(v.data(), weights);
        RealTensor::new(vec![self.dv, tt, n], out)
    }
}
