use num_complex::Complex64;

use super::layers::{lift_backward, local_linear_backward, local_linear_into};
use super::{lift, FnoConfig, FnoParams, HistoryWindow, SpectralConv};
use crate::error::{Error, Result};

/// Intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `v_0 .. v_L`, each `dv x (tau + 1) x n`.
    activations: Vec<Vec<f64>>,
    /// Pre-activation of layers `1 .. L`.
    preacts: Vec<Vec<f64>>,
    /// Retained input modes of each spectral convolution.
    modes: Vec<Vec<Complex64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-activations of layers `1 .. L`, each `dv x (tau + 1) x n`.
    pub fn preactivations(&self) -> &[Vec<f64>] {
        &self.preacts
    }
}

/// Gradients shaped like [`FnoParams`], plus the gradient with respect to the
/// window frames (`(tau + 1) x n`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct FnoGradients {
    pub params: FnoParams,
    pub input: Vec<f64>,
}

/// A configured network with its FFT plans.
#[derive(Clone, Debug)]
pub struct Fno {
    cfg: FnoConfig,
    conv: SpectralConv,
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Fno {
    pub fn new(cfg: FnoConfig) -> Result<Self> {
        Ok(Fno {
            conv: SpectralConv::new(&cfg)?,
            cfg,
        })
    }

    pub fn config(&self) -> &FnoConfig {
        &self.cfg
    }

    fn check(&self, window: &HistoryWindow, params: &FnoParams) -> Result<()> {
        params.check_shapes(&self.cfg)?;
        if window.n_frames() != self.cfg.frames() || window.n() != self.cfg.n {
            return Err(Error::Shape(format!(
                "window is {}x{}, model expects {}x{}",
                window.n_frames(),
                window.n(),
                self.cfg.frames(),
                self.cfg.n
            )));
        }
        Ok(())
    }

    pub fn forward(&self, window: &HistoryWindow, params: &FnoParams) -> Result<Vec<f64>> {
        Ok(self.forward_cached(window, params)?.output)
    }

    pub fn forward_cached(&self, window: &HistoryWindow, params: &FnoParams) -> Result<ForwardCache> {
        self.check(window, params)?;
        let cfg = &self.cfg;
        let (dv, n) = (cfg.dv, cfg.n);
        let points = cfg.frames() * n;
        let v0 = lift(&window.frames, cfg.delta, &params.lift_w, &params.lift_b)?.into_data();
        let mut activations = vec![v0];
        let mut preacts = Vec::with_capacity(cfg.layers);
        let mut modes = Vec::with_capacity(cfg.layers);
        for (l, layer) in params.layers.iter().enumerate() {
            let prev = &activations[l];
            let (mut pre, x) = self.conv.forward(prev, &layer.spectral);
            let mut local = vec![0.0; dv * points];
            local_linear_into(prev, &layer.local_w, &layer.local_b, points, &mut local);
            for (p, a) in pre.iter_mut().zip(&local) {
                *p += a;
            }
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::ForwardOverflow(l + 1));
            }
            activations.push(pre.iter().map(|&v| relu(v)).collect());
            preacts.push(pre);
            modes.push(x);
        }
        let last = &activations[cfg.layers];
        let offset = cfg.tau * n;
        let mut output = vec![params.proj_b; n];
        for c in 0..dv {
            let row = &last[c * points + offset..c * points + offset + n];
            for (o, v) in output.iter_mut().zip(row) {
                *o += params.proj_w[c] * v;
            }
        }
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::ForwardOverflow(cfg.layers + 1));
        }
        Ok(ForwardCache {
            activations,
            preacts,
            modes,
            output,
        })
    }

    pub fn backward(
        &self,
        window: &HistoryWindow,
        params: &FnoParams,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<FnoGradients> {
        self.check(window, params)?;
        let cfg = &self.cfg;
        let (dv, n) = (cfg.dv, cfg.n);
        let points = cfg.frames() * n;
        if cache.activations.len() != cfg.layers + 1
            || cache.activations.iter().any(|a| a.len() != dv * points)
        {
            return Err(Error::Shape("forward cache does not match the model".into()));
        }
        if upstream.len() != n {
            return Err(Error::Shape(format!("upstream has {} entries, expected {n}", upstream.len())));
        }
        let mut grads = FnoParams::zeros(cfg);

        grads.proj_b = upstream.iter().sum();
        let offset = cfg.tau * n;
        let last = &cache.activations[cfg.layers];
        let mut gv = vec![0.0; dv * points];
        for c in 0..dv {
            let start = c * points + offset;
            grads.proj_w[c] = last[start..start + n].iter().zip(upstream).map(|(v, g)| v * g).sum();
            for (d, g) in gv[start..start + n].iter_mut().zip(upstream) {
                *d = params.proj_w[c] * g;
            }
        }

        for l in (0..cfg.layers).rev() {
            let layer = &params.layers[l];
            let mut gpre = gv;
            for (g, &p) in gpre.iter_mut().zip(&cache.preacts[l]) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
            let prev = &cache.activations[l];
            let (ga, gb, mut gprev) = local_linear_backward(prev, &layer.local_w, &gpre, dv);
            let (gconv, gw) = self.conv.backward(&cache.modes[l], &layer.spectral, &gpre);
            for (d, s) in gprev.iter_mut().zip(&gconv) {
                *d += s;
            }
            grads.layers[l].local_w = ga;
            grads.layers[l].local_b = gb;
            grads.layers[l].spectral = gw;
            gv = gprev;
        }

        let (gw, gb, input) = lift_backward(&window.frames, cfg.delta, &params.lift_w, &gv);
        grads.lift_w = gw;
        grads.lift_b = gb;
        Ok(FnoGradients { params: grads, input })
    }
}

/// One-shot forward pass; builds the FFT plans on every call.
pub fn fno_forward(window: &HistoryWindow, params: &FnoParams, cfg: &FnoConfig) -> Result<Vec<f64>> {
    Fno::new(*cfg)?.forward(window, params)
}

/// One-shot reverse pass given a cache from [`Fno::forward_cached`].
pub fn fno_backward(
    window: &HistoryWindow,
    params: &FnoParams,
    cfg: &FnoConfig,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<FnoGradients> {
    Fno::new(*cfg)?.backward(window, params, cache, upstream)
}
