use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fnodst::fno::SpectralConv;
use fnodst::likelihood::nll_gradients;
use fnodst::rng::{Purpose, Stream};
use fnodst::spectral::FftPlan;
use fnodst::{CovParams, Fno, FnoConfig, FnoParams, HistoryWindow, RealTensor};
use num_complex::Complex64;

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut s = Stream::new(seed, Purpose::Test, 0);
    (0..n).map(|_| s.normal()).collect()
}

fn desk_config() -> FnoConfig {
    FnoConfig { tau: 4, h: 5, delta: 0.1, n: 128, dv: 16, layers: 3, modes_space: 16, modes_time: 4 }
}

fn window(cfg: &FnoConfig) -> HistoryWindow {
    let frames = RealTensor::new(vec![cfg.tau + 1, cfg.n], normals((cfg.tau + 1) * cfg.n, 1)).unwrap();
    HistoryWindow::new(frames, Some(normals(cfg.n, 2))).unwrap()
}

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("fft");
    for n in [64usize, 256, 1024, 2048] {
        let plan = FftPlan::new(n).unwrap();
        let x: Vec<Complex64> = normals(2 * n, 3).chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| {
                let mut buf = x.clone();
                plan.forward(&mut buf).unwrap();
                black_box(buf)
            })
        });
    }
    g.finish();
}

fn spectral_conv(c: &mut Criterion) {
    let cfg = desk_config();
    let op = SpectralConv::new(&cfg).unwrap();
    let v = RealTensor::new(vec![cfg.dv, cfg.tau + 1, cfg.n], normals(cfg.dv * (cfg.tau + 1) * cfg.n, 4)).unwrap();
    let w = FnoParams::init(&cfg, 5).unwrap().layers[0].spectral.clone();
    c.bench_function("spectral_conv", |b| b.iter(|| black_box(op.apply(&v, &w).unwrap())));
}

fn fno(c: &mut Criterion) {
    let cfg = desk_config();
    let net = Fno::new(cfg).unwrap();
    let params = FnoParams::init(&cfg, 6).unwrap();
    let w = window(&cfg);
    c.bench_function("fno_forward", |b| b.iter(|| black_box(net.forward(&w, &params).unwrap())));
    let upstream = normals(cfg.n, 7);
    c.bench_function("fno_forward_backward", |b| {
        b.iter(|| {
            let cache = net.forward_cached(&w, &params).unwrap();
            black_box(net.backward(&w, &params, &cache, &upstream).unwrap())
        })
    });
}

fn nll(c: &mut Criterion) {
    let mut g = c.benchmark_group("nll_gradients");
    for n in [64usize, 128, 256] {
        let a = CovParams::init(n, 64, 0.1, 8).unwrap();
        let (y, mu, yk) = (normals(n, 9), normals(n, 10), normals(n, 11));
        g.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| black_box(nll_gradients(&y, &mu, &yk, &a).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, fft, spectral_conv, fno, nll);
criterion_main!(benches);
