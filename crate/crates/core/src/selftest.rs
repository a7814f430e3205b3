//! Built-in numerical self-checks: FFT against the naive DFT, gradient
//! checks, Green's function quadrature and metric oracles.

use std::fmt::Write as _;
use std::time::Instant;

use num_complex::Complex64;

use crate::eval::{mpiw, mspe, picp};
use crate::fno::{Fno, FnoConfig, FnoParams, HistoryWindow};
use crate::green::{build_propagator, green_kernel, green_kernel_quadrature, ide_forecast, GammaParams};
use crate::likelihood::{nll_gradients, nll_value, CovParams};
use crate::rng::{Purpose, Stream};
use crate::spectral::{dft_naive, fft, ifft, RealTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Fft,
    Gradcheck,
    Green,
    Metrics,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Fft, Suite::Gradcheck, Suite::Green, Suite::Metrics];
}

/// Deliberate corruption used to prove the checks can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturbs the parameter gradient returned by the network backward pass.
    FnoBackward,
}

impl std::str::FromStr for Fault {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fno_backward" => Ok(Fault::FnoBackward),
            _ => Err(format!("unknown fault {s:?} (known: fno_backward)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> std::result::Result<String, String>) -> CheckResult {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub fn run(suites: &[Suite], fault: Option<Fault>) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for s in suites {
        match s {
            Suite::Fft => out.push(timed("fft_vs_naive", check_fft)),
            Suite::Gradcheck => {
                out.push(timed("fno_backward", || check_fno_backward(fault)));
                out.push(timed("nll_gradients", || check_nll_gradients(fault)));
            }
            Suite::Green => {
                out.push(timed("green_quadrature", check_green_quadrature));
                out.push(timed("green_sine_decay", check_sine_decay));
            }
            Suite::Metrics => out.push(timed("metric_oracles", check_metrics)),
        }
    }
    out
}

pub fn table(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        let _ = writeln!(
            s,
            "{:<18} {}  {:>7.2}s  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    s
}

fn check_fft() -> std::result::Result<String, String> {
    let mut s = Stream::new(0, Purpose::Test, 100);
    let mut worst: f64 = 0.0;
    for q in 0..=10 {
        let m = 1usize << q;
        for _ in 0..10 {
            let x: Vec<Complex64> = (0..m).map(|_| Complex64::new(s.normal(), s.normal())).collect();
            let fast = fft(&x).map_err(|e| e.to_string())?;
            let slow = dft_naive(&x).map_err(|e| e.to_string())?;
            let scale = slow.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
            let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale;
            worst = worst.max(err);
            let back = ifft(&fast).map_err(|e| e.to_string())?;
            let rt = back.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            if err > 1e-10 || rt > 1e-10 {
                return Err(format!("size {m}: relative error {err:e}, round trip {rt:e}"));
            }
        }
    }
    Ok(format!("sizes 1..1024, worst relative error {worst:.1e}"))
}

fn tiny() -> (Fno, FnoConfig) {
    let cfg = FnoConfig { tau: 2, h: 1, delta: 0.1, n: 16, dv: 3, layers: 2, modes_space: 3, modes_time: 2 };
    (Fno::new(cfg).expect("valid tiny config"), cfg)
}

fn tiny_window(seed: u64) -> HistoryWindow {
    let mut s = Stream::new(seed, Purpose::Test, 200);
    let frames = RealTensor::new(vec![3, 16], (0..48).map(|_| s.normal()).collect()).unwrap();
    let target = (0..16).map(|_| s.normal()).collect();
    HistoryWindow::new(frames, Some(target)).unwrap()
}

fn corrupt(grad: &mut [f64], fault: Option<Fault>) {
    if fault == Some(Fault::FnoBackward) {
        for (i, g) in grad.iter_mut().enumerate() {
            *g *= 1.0 + 0.05 * ((i % 3) as f64 - 1.0);
            *g += 1e-3;
        }
    }
}

/// Central differences along random directions, compared with the analytic
/// directional derivative.
fn directional(
    f: &dyn Fn(&[f64]) -> Option<f64>,
    x: &[f64],
    grad: &[f64],
    stream: &mut Stream,
    what: &str,
) -> std::result::Result<f64, String> {
    let mut worst: f64 = 0.0;
    let eps = 1e-6;
    for _ in 0..6 {
        let d: Vec<f64> = (0..x.len()).map(|_| stream.normal()).collect();
        let at = |t: f64| -> Vec<f64> { x.iter().zip(&d).map(|(a, b)| a + t * b).collect() };
        let (Some(fp), Some(fm)) = (f(&at(eps)), f(&at(-eps))) else {
            return Err(format!("{what}: objective failed near the check point"));
        };
        let fd = (fp - fm) / (2.0 * eps);
        let an: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    if worst < 1e-4 {
        Ok(worst)
    } else {
        Err(format!("{what}: directional derivative relative error {worst:.2e}"))
    }
}

fn check_fno_backward(fault: Option<Fault>) -> std::result::Result<String, String> {
    let (net, cfg) = tiny();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let w = tiny_window(seed);
        let p = FnoParams::init(&cfg, seed).map_err(|e| e.to_string())?;
        let mut s = Stream::new(seed, Purpose::Test, 201);
        let up: Vec<f64> = (0..16).map(|_| s.normal()).collect();
        let cache = net.forward_cached(&w, &p).map_err(|e| e.to_string())?;
        let mut g = net.backward(&w, &p, &cache, &up).map_err(|e| e.to_string())?.params.to_flat();
        corrupt(&mut g, fault);
        let f = |x: &[f64]| {
            let mut q = p.clone();
            q.set_flat(x).ok()?;
            let out = net.forward(&w, &q).ok()?;
            Some(out.iter().zip(&up).map(|(a, b)| a * b).sum())
        };
        worst = worst.max(directional(&f, &p.to_flat(), &g, &mut s, "fno_backward")?);
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

fn check_nll_gradients(fault: Option<Fault>) -> std::result::Result<String, String> {
    let (net, cfg) = tiny();
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let w = tiny_window(seed);
        let y = w.target.clone().unwrap();
        let p = FnoParams::init(&cfg, seed).map_err(|e| e.to_string())?;
        let a = CovParams::init(16, 5, 0.08, seed).map_err(|e| e.to_string())?;
        let cache = net.forward_cached(&w, &p).map_err(|e| e.to_string())?;
        let ng = nll_gradients(&y, cache.output(), w.last_frame(), &a).map_err(|e| e.to_string())?;
        let mut gt = net.backward(&w, &p, &cache, &ng.mu).map_err(|e| e.to_string())?.params.to_flat();
        corrupt(&mut gt, fault);
        let nt = gt.len();
        let mut grad = gt;
        grad.extend(ng.cov.to_flat());
        let mut x = p.to_flat();
        x.extend(a.to_flat());
        let f = |x: &[f64]| {
            let mut q = p.clone();
            q.set_flat(&x[..nt]).ok()?;
            let mut b = a.clone();
            b.set_flat(&x[nt..]).ok()?;
            let mu = net.forward(&w, &q).ok()?;
            nll_value(&y, &mu, w.last_frame(), &b).ok()
        };
        let mut s = Stream::new(seed, Purpose::Test, 202);
        worst = worst.max(directional(&f, &x, &grad, &mut s, "nll_gradients")?);
    }
    Ok(format!("worst relative error {worst:.1e}"))
}

fn check_green_quadrature() -> std::result::Result<String, String> {
    let mut s = Stream::new(0, Purpose::Test, 300);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let p = GammaParams { gamma1: s.uniform_range(-0.5, 0.5), gamma2: s.uniform_range(0.05, 0.7) };
        let tau = s.uniform_range(0.1, 0.5);
        for i in 0..21 {
            let r = -1.0 + 0.1 * i as f64;
            let closed = green_kernel(&[r], tau, p).map_err(|e| e.to_string())?;
            let quad = green_kernel_quadrature(r, tau, p).map_err(|e| e.to_string())?;
            let err = (closed - quad).abs();
            worst = worst.max(err);
            if err > 1e-6 {
                return Err(format!("offset {r:.1}, gamma {p:?}, tau {tau:.3}: |diff| {err:e}"));
            }
        }
    }
    Ok(format!("63 offsets, worst difference {worst:.1e}"))
}

fn check_sine_decay() -> std::result::Result<String, String> {
    let n = 256;
    let (gamma2, hd) = (0.05, 0.5);
    let prop = build_propagator(n, hd, GammaParams { gamma1: 0.0, gamma2 }).map_err(|e| e.to_string())?;
    let y: Vec<f64> = (0..n).map(|i| (std::f64::consts::TAU * i as f64 / n as f64).sin()).collect();
    let out = ide_forecast(&y, &prop).map_err(|e| e.to_string())?;
    let amp = out.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / y.iter().map(|v| v * v).sum::<f64>();
    let want = (-4.0 * std::f64::consts::PI.powi(2) * gamma2 * hd).exp();
    let rel = (amp - want).abs() / want;
    if rel < 0.02 {
        Ok(format!("amplitude {amp:.5} vs {want:.5}"))
    } else {
        Err(format!("amplitude {amp:.5}, expected {want:.5}"))
    }
}

fn check_metrics() -> std::result::Result<String, String> {
    let mut s = Stream::new(0, Purpose::Test, 400);
    for fixture in 0..50 {
        let (inst, pts, wins) = (1 + s.index(4), 1 + s.index(16), 1 + s.index(3));
        let len = inst * pts * wins;
        let t: Vec<f64> = (0..len).map(|_| s.normal()).collect();
        let f: Vec<f64> = (0..len).map(|_| s.normal()).collect();
        let lo: Vec<f64> = f.iter().map(|v| v - s.uniform()).collect();
        let hi: Vec<f64> = f.iter().map(|v| v + s.uniform()).collect();
        let (mut se, mut inside, mut width) = (0.0, 0usize, 0.0);
        for i in 0..inst {
            for w in 0..wins {
                for p in 0..pts {
                    let k = (i * wins + w) * pts + p;
                    se += (t[k] - f[k]) * (t[k] - f[k]);
                    inside += usize::from(lo[k] <= t[k] && t[k] <= hi[k]);
                    width += hi[k] - lo[k];
                }
            }
        }
        let c = len as f64;
        let got = (
            mspe(&t, &f).map_err(|e| e.to_string())?,
            picp(&t, &lo, &hi).map_err(|e| e.to_string())?,
            mpiw(&lo, &hi).map_err(|e| e.to_string())?,
        );
        if got != (se / c, inside as f64 / c, width / c) {
            return Err(format!("fixture {fixture}: {got:?}"));
        }
    }
    Ok("50 fixtures, bitwise equal".into())
}
