//! Window extraction and Adam training of the mean network and the error
//! model.
//!
//! Training runs in two stages: a few epochs of mean-squared error on the
//! network output with the covariance parameters frozen, then the full
//! negative log-likelihood in all parameters. The correlation range is
//! optimized on the log scale.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::burgers::FieldSeries;
use crate::error::{Error, Result};
use crate::fno::{Fno, FnoConfig, FnoParams, HistoryWindow};
use crate::likelihood::{nll_gradients, nll_value, CovParams, SIGMA_FLOOR};
use crate::rng::{Purpose, Stream};
use crate::spectral::RealTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Windows per optimizer step.
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub warmup_mse_epochs: usize,
    /// Maximum global gradient norm.
    pub grad_clip: f64,
    /// Fraction of windows held out for best-epoch selection; zero selects on
    /// the training windows.
    pub holdout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch: 8,
            epochs: 50,
            seed: 0,
            warmup_mse_epochs: 2,
            grad_clip: 10.0,
            holdout: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr = {} must be positive", self.lr)));
        }
        for (key, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{key} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("train.eps must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("train.batch must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config(format!("train.grad_clip = {} must be positive", self.grad_clip)));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::Config(format!("train.holdout = {} must lie in [0, 1)", self.holdout)));
        }
        Ok(())
    }
}

/// Adam moment accumulators for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() || state.v.len() != grads.len() {
        return Err(Error::Shape("parameter, gradient and moment lengths differ".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Scales `grads` so its Euclidean norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Window ending at model time `k` (1-based, `tau + 1 <= k <= T - h`):
/// frames `Y_{k-tau} .. Y_k`, target `Y_{k+h}`.
pub fn window_at(series: &FieldSeries, k: usize, tau: usize, h: usize) -> Result<HistoryWindow> {
    let t = series.t_len();
    if t <= tau + h {
        return Err(Error::SeriesTooShort { t, needed: tau + h + 1 });
    }
    if k < tau + 1 || k + h > t {
        return Err(Error::Config(format!(
            "forecast origin k = {k} outside the valid range {}..={}",
            tau + 1,
            t - h
        )));
    }
    let n = series.n;
    let start = (k - tau - 1) * n;
    let frames = series.values.data()[start..start + (tau + 1) * n].to_vec();
    let target = series.frame(k + h - 1).to_vec();
    HistoryWindow::new(RealTensor::new(vec![tau + 1, n], frames)?, Some(target))
}

/// All windows of every series, grouped by series, `k` ascending.
pub fn make_windows(series: &[FieldSeries], tau: usize, h: usize) -> Result<Vec<HistoryWindow>> {
    let mut out = Vec::new();
    for s in series {
        let t = s.t_len();
        if t <= tau + h {
            return Err(Error::SeriesTooShort { t, needed: tau + h + 1 });
        }
        for k in tau + 1..=t - h {
            out.push(window_at(s, k, tau, h)?);
        }
    }
    Ok(out)
}

/// Settings of the error model at initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovConfig {
    pub hidden: usize,
    pub alpha_r_init: f64,
}

impl Default for CovConfig {
    fn default() -> Self {
        CovConfig {
            hidden: crate::likelihood::DEFAULT_HIDDEN,
            alpha_r_init: 0.1,
        }
    }
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub theta: FnoParams,
    pub alpha: CovParams,
    pub adam_theta: AdamState,
    pub adam_alpha: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    /// Best selection NLL so far and the parameters that achieved it.
    pub best: Option<(f64, FnoParams, CovParams)>,
}

impl TrainState {
    pub fn new(fno: &FnoConfig, cov: &CovConfig, seed: u64) -> Result<Self> {
        let theta = FnoParams::init(fno, seed)?;
        let alpha = CovParams::init(fno.n, cov.hidden, cov.alpha_r_init, seed)?;
        Ok(TrainState {
            adam_theta: AdamState::new(theta.to_flat().len()),
            adam_alpha: AdamState::new(alpha.num_scalars()),
            theta,
            alpha,
            epoch: 0,
            step: 0,
            best: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: u64,
    /// Mean per-window NLL on the selection windows.
    pub nll: f64,
    /// Mean squared error of the network output on the selection windows.
    pub mse: f64,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
            .collect()
    }
}

pub struct TrainOutcome {
    /// Parameters with the lowest selection NLL.
    pub theta: FnoParams,
    pub alpha: CovParams,
    pub log: TrainingLog,
    /// Final optimizer state, for resuming.
    pub state: TrainState,
}

/// The optimized covariance vector: flat parameters with `ln alpha_r` last.
fn alpha_to_opt(a: &CovParams) -> Vec<f64> {
    let mut v = a.to_flat();
    let last = v.len() - 1;
    v[last] = v[last].ln();
    v
}

fn alpha_from_opt(a: &mut CovParams, v: &[f64]) -> Result<()> {
    let mut flat = v.to_vec();
    let last = flat.len() - 1;
    flat[last] = flat[last].exp();
    a.set_flat(&flat)
}

fn softplus_inverse(s: f64) -> f64 {
    if s > 30.0 {
        s
    } else {
        s.exp_m1().ln()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    Mse,
    Nll,
}

struct WindowGrad {
    loss: f64,
    theta: Vec<f64>,
    alpha: Option<Vec<f64>>,
}

fn target(w: &HistoryWindow) -> Result<&[f64]> {
    w.target
        .as_deref()
        .ok_or_else(|| Error::Shape("training window has no target".into()))
}

fn window_grad(net: &Fno, w: &HistoryWindow, st: &TrainState, stage: Stage) -> Result<WindowGrad> {
    let y = target(w)?;
    let cache = net.forward_cached(w, &st.theta)?;
    let mu = cache.output();
    let n = y.len() as f64;
    match stage {
        Stage::Mse => {
            let loss = mu.iter().zip(y).map(|(m, t)| (m - t) * (m - t)).sum::<f64>() / n;
            let up: Vec<f64> = mu.iter().zip(y).map(|(m, t)| 2.0 * (m - t) / n).collect();
            let g = net.backward(w, &st.theta, &cache, &up)?;
            Ok(WindowGrad {
                loss,
                theta: g.params.to_flat(),
                alpha: None,
            })
        }
        Stage::Nll => {
            let ng = nll_gradients(y, mu, w.last_frame(), &st.alpha)?;
            let g = net.backward(w, &st.theta, &cache, &ng.mu)?;
            let mut ga = ng.cov.to_flat();
            let last = ga.len() - 1;
            ga[last] *= st.alpha.alpha_r;
            Ok(WindowGrad {
                loss: ng.value,
                theta: g.params.to_flat(),
                alpha: Some(ga),
            })
        }
    }
}

/// Mean NLL and MSE over `windows`.
pub fn evaluate_objectives(
    net: &Fno,
    windows: &[HistoryWindow],
    theta: &FnoParams,
    alpha: &CovParams,
) -> Result<(f64, f64)> {
    let parts: Vec<Result<(f64, f64)>> = windows
        .par_iter()
        .map(|w| {
            let y = target(w)?;
            let mu = net.forward(w, theta)?;
            let mse = mu.iter().zip(y).map(|(m, t)| (m - t) * (m - t)).sum::<f64>() / y.len() as f64;
            Ok((nll_value(y, &mu, w.last_frame(), alpha)?, mse))
        })
        .collect();
    let (mut nll, mut mse) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        nll += a;
        mse += b;
    }
    let count = windows.len() as f64;
    Ok((nll / count, mse / count))
}

/// Sets the output bias of the sigma network so the initial standard
/// deviation matches the residual RMS of the current mean network.
fn init_sigma_from_residuals(net: &Fno, windows: &[HistoryWindow], st: &mut TrainState) -> Result<()> {
    let (_, mse) = evaluate_objectives(net, windows, &st.theta, &st.alpha)?;
    let target = (mse.sqrt() - SIGMA_FLOOR).max(SIGMA_FLOOR);
    let b = softplus_inverse(target);
    st.alpha.b2.iter_mut().for_each(|v| *v = b);
    Ok(())
}

fn diverged(e: Error, epoch: usize, step: u64) -> Error {
    match e {
        Error::NonFinite(_) | Error::NotPositiveDefinite | Error::ForwardOverflow(_) => {
            Error::TrainingDiverged { epoch, step }
        }
        other => other,
    }
}

/// Splits window indices into (training, selection) using the holdout
/// fraction; with no holdout both are all windows.
fn split_indices(count: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    let held = (cfg.holdout * count as f64).round() as usize;
    if held == 0 || held >= count {
        return (idx.clone(), idx);
    }
    Stream::new(cfg.seed, Purpose::Shuffle, (1 << 48) - 1).shuffle(&mut idx);
    let (sel, train) = idx.split_at(held);
    let (mut train, mut sel) = (train.to_vec(), sel.to_vec());
    train.sort_unstable();
    sel.sort_unstable();
    (train, sel)
}

/// Trains from `state` (fresh or resumed) for the remaining epochs of
/// `cfg.epochs`.
pub fn train_windows(
    windows: &[HistoryWindow],
    fno_cfg: &FnoConfig,
    cfg: &TrainConfig,
    mut state: TrainState,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let net = Fno::new(*fno_cfg)?;
    let (train_idx, sel_idx) = split_indices(windows.len(), cfg);
    let train_set: Vec<HistoryWindow> = train_idx.iter().map(|&i| windows[i].clone()).collect();
    let sel_set: Vec<HistoryWindow> = sel_idx.iter().map(|&i| windows[i].clone()).collect();
    let clock = Instant::now();
    let mut log = TrainingLog::default();
    let mut theta_flat = state.theta.to_flat();
    let mut alpha_opt = alpha_to_opt(&state.alpha);

    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let stage = if epoch < cfg.warmup_mse_epochs { Stage::Mse } else { Stage::Nll };
        if stage == Stage::Nll && epoch == cfg.warmup_mse_epochs && state.adam_alpha.step == 0 {
            init_sigma_from_residuals(&net, &train_set, &mut state)
                .map_err(|e| diverged(e, epoch, state.step))?;
            alpha_opt = alpha_to_opt(&state.alpha);
            // Moments gathered on the MSE scale would mis-size the first
            // likelihood steps.
            state.adam_theta = AdamState::new(theta_flat.len());
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Stream::new(cfg.seed, Purpose::Shuffle, epoch as u64).shuffle(&mut order);
        for batch in order.chunks(cfg.batch) {
            let parts: Vec<Result<WindowGrad>> = batch
                .par_iter()
                .map(|&i| window_grad(&net, &train_set[i], &state, stage))
                .collect();
            let mut g_theta = vec![0.0; theta_flat.len()];
            let mut g_alpha = vec![0.0; alpha_opt.len()];
            let mut loss = 0.0;
            for p in parts {
                let p = p.map_err(|e| diverged(e, epoch, state.step))?;
                loss += p.loss;
                g_theta.iter_mut().zip(&p.theta).for_each(|(a, b)| *a += b);
                if let Some(ga) = &p.alpha {
                    g_alpha.iter_mut().zip(ga).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            g_theta.iter_mut().for_each(|g| *g *= scale);
            g_alpha.iter_mut().for_each(|g| *g *= scale);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step: state.step });
            }
            match stage {
                Stage::Mse => {
                    clip_global_norm(&mut g_theta, cfg.grad_clip);
                }
                Stage::Nll => {
                    let norm = (g_theta.iter().chain(&g_alpha).map(|g| g * g).sum::<f64>()).sqrt();
                    if norm > cfg.grad_clip {
                        let s = cfg.grad_clip / norm;
                        g_theta.iter_mut().chain(g_alpha.iter_mut()).for_each(|g| *g *= s);
                    }
                }
            }
            adam_step(&mut theta_flat, &g_theta, &mut state.adam_theta, cfg)
                .map_err(|e| diverged(e, epoch, state.step))?;
            if stage == Stage::Nll {
                adam_step(&mut alpha_opt, &g_alpha, &mut state.adam_alpha, cfg)
                    .map_err(|e| diverged(e, epoch, state.step))?;
                alpha_from_opt(&mut state.alpha, &alpha_opt)?;
            }
            state.theta.set_flat(&theta_flat)?;
            state.step += 1;
        }
        state.epoch += 1;

        let (nll, mse) = evaluate_objectives(&net, &sel_set, &state.theta, &state.alpha)
            .map_err(|e| diverged(e, epoch, state.step))?;
        log.records.push(LogRecord {
            epoch: state.epoch,
            step: state.step,
            nll,
            mse,
            wallclock_s: clock.elapsed().as_secs_f64(),
        });
        // Warmup epochs only leave a fallback; any likelihood epoch beats it.
        let score = if stage == Stage::Mse { f64::INFINITY } else { nll };
        let better = match &state.best {
            None => true,
            Some((best, ..)) => stage == Stage::Mse || score < *best,
        };
        if better {
            state.best = Some((score, state.theta.clone(), state.alpha.clone()));
        }
    }

    let (theta, alpha) = match &state.best {
        Some((_, t, a)) => (t.clone(), a.clone()),
        None => (state.theta.clone(), state.alpha.clone()),
    };
    Ok(TrainOutcome {
        theta,
        alpha,
        log,
        state,
    })
}

/// Builds training windows from `series` and trains from scratch.
pub fn train(
    series: &[FieldSeries],
    fno_cfg: &FnoConfig,
    cov_cfg: &CovConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let windows = make_windows(series, fno_cfg.tau, fno_cfg.h)?;
    let state = TrainState::new(fno_cfg, cov_cfg, cfg.seed)?;
    train_windows(&windows, fno_cfg, cfg, state)
}
