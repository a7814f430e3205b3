//! Fourier neural operator mapping a window of past fields on the space-time
//! grid to a forecast field.
//!
//! The network is `Q . relu(W_L + K_L) . ... . relu(W_1 + K_1) . P` where `P`
//! lifts each grid point `(s, t, y)` to `dv` channels, `W_l` is a pointwise
//! affine map, `K_l` multiplies a truncated set of Fourier modes by learned
//! complex `dv x dv` matrices, and `Q` projects back to one channel. The
//! forecast is the projected field at the most recent time index.
//!
//! Hidden states are stored channel-major as `dv x (tau + 1) x n`.

mod layers;
mod network;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, Stream};
use crate::spectral::RealTensor;

pub use layers::{lift, lift_backward, local_linear, local_linear_backward, SpectralConv};
pub use network::{fno_backward, fno_forward, ForwardCache, Fno, FnoGradients};

/// Spatial dimension handled by this implementation.
pub const SPACE_DIM: usize = 1;
/// Input features per grid point: space coordinate, time coordinate, value.
pub const LIFT_INPUTS: usize = SPACE_DIM + 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    /// History lag; the window holds `tau + 1` frames.
    pub tau: usize,
    /// Forecast horizon in model steps.
    pub h: usize,
    pub delta: f64,
    pub n: usize,
    pub dv: usize,
    pub layers: usize,
    /// Retained spatial frequencies on each side of zero.
    pub modes_space: usize,
    /// Retained non-negative time frequencies of the padded window.
    pub modes_time: usize,
}

impl FnoConfig {
    pub fn frames(&self) -> usize {
        self.tau + 1
    }

    /// Time extent after zero-padding to a power of two.
    pub fn padded_time(&self) -> usize {
        self.frames().next_power_of_two()
    }

    pub fn max_time_modes(&self) -> usize {
        self.padded_time() / 2 + 1
    }

    pub fn spectral_len(&self) -> usize {
        self.dv * self.dv * 2 * self.modes_space * self.modes_time
    }

    /// Structural checks needed to build the network. Any `dv >= 1` is
    /// accepted here so tiny models can be gradient-checked; see
    /// [`FnoConfig::validate_width`] for the width rule applied to run
    /// configurations.
    pub fn validate(&self) -> Result<()> {
        if self.dv == 0 {
            return Err(Error::Config("model.dv must be at least 1".into()));
        }
        if !self.n.is_power_of_two() || self.n < 2 {
            return Err(Error::Config(format!("grid.n = {} must be a power of two", self.n)));
        }
        if self.layers == 0 {
            return Err(Error::Config("model.layers must be at least 1".into()));
        }
        if self.h == 0 {
            return Err(Error::Config("model.h must be at least 1".into()));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config(format!("delta = {} must be positive", self.delta)));
        }
        if self.modes_space == 0 || self.modes_space > self.n / 2 {
            return Err(Error::Config(format!(
                "model.modes_space = {} must lie in 1..={}",
                self.modes_space,
                self.n / 2
            )));
        }
        let max_t = self.max_time_modes().min(self.frames());
        if self.modes_time == 0 || self.modes_time > max_t {
            return Err(Error::Config(format!(
                "model.modes_time = {} must lie in 1..={max_t} for tau = {}",
                self.modes_time, self.tau
            )));
        }
        Ok(())
    }

    /// The channel width must exceed the number of lifted inputs, `d + 2`.
    pub fn validate_width(&self) -> Result<()> {
        if self.dv <= SPACE_DIM + 2 {
            return Err(Error::Config(format!(
                "model.dv = {} must exceed d + 2 = {}",
                self.dv,
                SPACE_DIM + 2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `dv x dv`, row-major.
    pub local_w: Vec<f64>,
    pub local_b: Vec<f64>,
    /// `dv (out) x dv (in) x 2 modes_space x modes_time`. Spatial slot `j`
    /// holds frequency `j` for `j < modes_space` and `j - 2 modes_space`
    /// (a negative frequency) otherwise.
    pub spectral: Vec<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FnoParams {
    /// `dv x 3`, columns `(s, t, y)`.
    pub lift_w: Vec<f64>,
    pub lift_b: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub proj_w: Vec<f64>,
    pub proj_b: f64,
}

impl FnoParams {
    pub fn zeros(cfg: &FnoConfig) -> Self {
        let dv = cfg.dv;
        FnoParams {
            lift_w: vec![0.0; dv * LIFT_INPUTS],
            lift_b: vec![0.0; dv],
            layers: (0..cfg.layers)
                .map(|_| LayerParams {
                    local_w: vec![0.0; dv * dv],
                    local_b: vec![0.0; dv],
                    spectral: vec![Complex64::default(); cfg.spectral_len()],
                })
                .collect(),
            proj_w: vec![0.0; dv],
            proj_b: 0.0,
        }
    }

    /// Glorot-uniform real weights, zero biases, complex-normal spectral
    /// weights with RMS modulus `1 / (dv sqrt(modes))`.
    pub fn init(cfg: &FnoConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut stream = Stream::new(seed, Purpose::FnoInit, 0);
        let mut p = FnoParams::zeros(cfg);
        let dv = cfg.dv;
        let glorot = |s: &mut Stream, w: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = s.uniform_range(-limit, limit);
            }
        };
        glorot(&mut stream, &mut p.lift_w, LIFT_INPUTS, dv);
        let modes = (2 * cfg.modes_space * cfg.modes_time) as f64;
        let scale = 1.0 / (dv as f64 * modes.sqrt());
        let part = scale / std::f64::consts::SQRT_2;
        for layer in &mut p.layers {
            glorot(&mut stream, &mut layer.local_w, dv, dv);
            for w in &mut layer.spectral {
                *w = Complex64::new(stream.normal() * part, stream.normal() * part);
            }
        }
        glorot(&mut stream, &mut p.proj_w, dv, 1);
        Ok(p)
    }

    pub fn num_scalars(cfg: &FnoConfig) -> usize {
        let dv = cfg.dv;
        dv * LIFT_INPUTS + dv + cfg.layers * (dv * dv + dv + 2 * cfg.spectral_len()) + dv + 1
    }

    /// All parameters as reals; complex weights contribute `(re, im)` pairs.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.lift_w);
        out.extend_from_slice(&self.lift_b);
        for layer in &self.layers {
            out.extend_from_slice(&layer.local_w);
            out.extend_from_slice(&layer.local_b);
            for c in &layer.spectral {
                out.push(c.re);
                out.push(c.im);
            }
        }
        out.extend_from_slice(&self.proj_w);
        out.push(self.proj_b);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.to_flat().len();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        fill(&mut self.lift_w);
        fill(&mut self.lift_b);
        for layer in &mut self.layers {
            fill(&mut layer.local_w);
            fill(&mut layer.local_b);
            for c in &mut layer.spectral {
                let mut pair = [0.0; 2];
                fill(&mut pair);
                *c = Complex64::new(pair[0], pair[1]);
            }
        }
        fill(&mut self.proj_w);
        let mut b = [0.0];
        fill(&mut b);
        self.proj_b = b[0];
        Ok(())
    }

    pub fn check_shapes(&self, cfg: &FnoConfig) -> Result<()> {
        let dv = cfg.dv;
        let ok = self.lift_w.len() == dv * LIFT_INPUTS
            && self.lift_b.len() == dv
            && self.layers.len() == cfg.layers
            && self.layers.iter().all(|l| {
                l.local_w.len() == dv * dv
                    && l.local_b.len() == dv
                    && l.spectral.len() == cfg.spectral_len()
            })
            && self.proj_w.len() == dv;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameters do not match the model configuration".into()))
        }
    }
}

/// `tau + 1` consecutive frames, oldest first, and the frame `h` steps after
/// the newest one when known.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    pub frames: RealTensor,
    pub target: Option<Vec<f64>>,
}

impl HistoryWindow {
    pub fn new(frames: RealTensor, target: Option<Vec<f64>>) -> Result<Self> {
        if frames.rank() != 2 {
            return Err(Error::Shape(format!("window frames have rank {}", frames.rank())));
        }
        if let Some(t) = &target {
            if t.len() != frames.shape()[1] {
                return Err(Error::Shape(format!(
                    "target has {} points, frames have {}",
                    t.len(),
                    frames.shape()[1]
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("window target".into()));
            }
        }
        Ok(HistoryWindow { frames, target })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn n(&self) -> usize {
        self.frames.shape()[1]
    }

    /// The newest frame.
    pub fn last_frame(&self) -> &[f64] {
        let n = self.n();
        let data = self.frames.data();
        &data[data.len() - n..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> FnoConfig {
        FnoConfig {
            tau: 4,
            h: 5,
            delta: 0.1,
            n: 64,
            dv: 8,
            layers: 3,
            modes_space: 8,
            modes_time: 3,
        }
    }

    #[test]
    fn config_validation() {
        cfg().validate().unwrap();
        assert!(FnoConfig { dv: 3, ..cfg() }.validate_width().is_err());
        FnoConfig { dv: 3, ..cfg() }.validate().unwrap();
        assert!(FnoConfig { dv: 0, ..cfg() }.validate().is_err());
        assert!(FnoConfig { modes_space: 33, ..cfg() }.validate().is_err());
        assert!(FnoConfig { modes_time: 6, ..cfg() }.validate().is_err());
        assert!(FnoConfig { n: 48, ..cfg() }.validate().is_err());
        let no_history = FnoConfig { tau: 0, modes_time: 1, ..cfg() };
        no_history.validate().unwrap();
        assert_eq!(no_history.padded_time(), 1);
        assert_eq!(cfg().padded_time(), 8);
    }

    #[test]
    fn init_is_deterministic_and_flat_roundtrips() {
        let a = FnoParams::init(&cfg(), 3).unwrap();
        let b = FnoParams::init(&cfg(), 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, FnoParams::init(&cfg(), 4).unwrap());
        let flat = a.to_flat();
        assert_eq!(flat.len(), FnoParams::num_scalars(&cfg()));
        let mut c = FnoParams::zeros(&cfg());
        c.set_flat(&flat).unwrap();
        assert_eq!(a, c);
        assert!(c.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn spectral_init_scale() {
        let big = FnoConfig { dv: 16, n: 128, modes_space: 16, modes_time: 4, ..cfg() };
        let p = FnoParams::init(&big, 1).unwrap();
        let w = &p.layers[0].spectral;
        assert!(w.len() >= 10_000);
        let rms = (w.iter().map(|c| c.norm_sqr()).sum::<f64>() / w.len() as f64).sqrt();
        let target = 1.0 / (16.0 * 128f64.sqrt());
        assert!((rms / target - 1.0).abs() < 0.2);
    }

    #[test]
    fn window_validation() {
        let frames = RealTensor::new(vec![2, 4], vec![0.0; 8]).unwrap();
        assert!(HistoryWindow::new(frames.clone(), Some(vec![0.0; 3])).is_err());
        let w = HistoryWindow::new(frames, Some(vec![0.0; 4])).unwrap();
        assert_eq!(w.last_frame().len(), 4);
    }
}
