use fnodst::burgers::{generate_dataset, BurgersConfig, FieldSeries, GammaMode};
use fnodst::eval::{evaluate, mpiw, mspe, picp, FnoModel, Forecaster, Origins};
use fnodst::fno::{Fno, FnoConfig};
use fnodst::likelihood::{build_covariance, prediction_interval, ForecastDist};
use fnodst::linalg::cholesky;
use fnodst::rng::{Purpose, Stream};
use fnodst::spectral::RealTensor;
use fnodst::train::{CovConfig, TrainState};
use proptest::prelude::*;

/// Fixture laid out as instance x window x point.
fn fixture(seed: u64, inst: usize, win: usize, n: usize) -> [Vec<f64>; 4] {
    let mut s = Stream::new(seed, Purpose::Test, 0);
    let len = inst * win * n;
    let truth: Vec<f64> = (0..len).map(|_| s.normal()).collect();
    let mean: Vec<f64> = (0..len).map(|_| s.normal()).collect();
    let half: Vec<f64> = (0..len).map(|_| s.uniform() * 2.0).collect();
    let lower = mean.iter().zip(&half).map(|(m, h)| m - h).collect();
    let upper = mean.iter().zip(&half).map(|(m, h)| m + h).collect();
    [truth, mean, lower, upper]
}

#[test]
fn metrics_match_triple_loops() {
    for seed in 0..50u64 {
        let (inst, win, n) = (1 + seed as usize % 4, 1 + seed as usize % 3, 8 + seed as usize % 5);
        let [truth, mean, lower, upper] = fixture(seed, inst, win, n);
        let (mut se, mut hits, mut width) = (0.0, 0usize, 0.0);
        for a in 0..inst {
            for b in 0..win {
                for c in 0..n {
                    let i = (a * win + b) * n + c;
                    se += (truth[i] - mean[i]) * (truth[i] - mean[i]);
                    if lower[i] <= truth[i] && truth[i] <= upper[i] {
                        hits += 1;
                    }
                    width += upper[i] - lower[i];
                }
            }
        }
        let count = (inst * win * n) as f64;
        assert_eq!(mspe(&truth, &mean).unwrap().to_bits(), (se / count).to_bits());
        assert_eq!(picp(&truth, &lower, &upper).unwrap().to_bits(), (hits as f64 / count).to_bits());
        assert_eq!(mpiw(&lower, &upper).unwrap().to_bits(), (width / count).to_bits());
    }
}

proptest! {
    #[test]
    fn metrics_ignore_ordering(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let [truth, mean, lower, upper] = fixture(seed, 2, 3, 7);
        let mut idx: Vec<usize> = (0..truth.len()).collect();
        Stream::new(perm_seed, Purpose::Test, 1).shuffle(&mut idx);
        let p = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let (t2, m2, l2, u2) = (p(&truth), p(&mean), p(&lower), p(&upper));
        prop_assert!((mspe(&truth, &mean).unwrap() - mspe(&t2, &m2).unwrap()).abs() < 1e-12);
        prop_assert_eq!(picp(&truth, &lower, &upper).unwrap(), picp(&t2, &l2, &u2).unwrap());
        prop_assert!((mpiw(&lower, &upper).unwrap() - mpiw(&l2, &u2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn metric_ranges(seed in any::<u64>()) {
        let [truth, mean, lower, upper] = fixture(seed, 1, 2, 9);
        prop_assert!(mspe(&truth, &mean).unwrap() >= 0.0);
        let c = picp(&truth, &lower, &upper).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!(mpiw(&lower, &upper).unwrap() >= 0.0);
    }
}

#[test]
fn coverage_of_exact_gaussian_intervals() {
    let n = 64;
    let sigma: Vec<f64> = (0..n).map(|i| 0.5 + (i as f64 / 10.0).sin().abs()).collect();
    let cov = build_covariance(&sigma, 0.05).unwrap();
    let l = cholesky(&cov, n).unwrap();
    let mean: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
    let dist = ForecastDist { mean: mean.clone(), sigma: sigma.clone(), cov: None };
    let (lo, hi) = prediction_interval(&dist, 0.95).unwrap();
    let mut stream = Stream::new(8, Purpose::Test, 0);
    let (mut truth, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..400 {
        let z: Vec<f64> = (0..n).map(|_| stream.normal()).collect();
        for i in 0..n {
            let y = mean[i] + (0..=i).map(|j| l[i * n + j] * z[j]).sum::<f64>();
            truth.push(y);
        }
        lower.extend_from_slice(&lo);
        upper.extend_from_slice(&hi);
    }
    let c = picp(&truth, &lower, &upper).unwrap();
    assert!((0.93..=0.97).contains(&c), "{c}");
}

fn constant_series(t: usize, n: usize, v: f64) -> FieldSeries {
    FieldSeries { values: RealTensor::new(vec![t, n], vec![v; t * n]).unwrap(), gamma: 0.1, delta: 0.1, n }
}

#[test]
fn persistence_is_exact_on_static_fields() {
    let test = vec![constant_series(8, 16, 0.7), constant_series(8, 16, -2.0)];
    let r = evaluate(&[Forecaster::Persistence], &test, 3, Origins::All, 0.95).unwrap();
    assert_eq!(r.models[0].mspe, 0.0);
    assert_eq!(r.models[0].picp, None);
    assert_eq!(r.n_windows, 2 * 5);
}

fn small_model(tau: usize) -> (Forecaster, Vec<FieldSeries>) {
    let data = BurgersConfig { n: 16, t_model: 6, gamma_mode: GammaMode::Fixed { value: 0.3 }, ..Default::default() };
    let ds = generate_dataset(&data, 3, 3, 4).unwrap();
    let cfg = FnoConfig { tau, h: 2, delta: 0.1, n: 16, dv: 5, layers: 1, modes_space: 3, modes_time: if tau == 0 { 1 } else { 2 } };
    let st = TrainState::new(&cfg, &CovConfig { hidden: 4, alpha_r_init: 0.1 }, 2).unwrap();
    let model = FnoModel { name: format!("tau{tau}"), net: Fno::new(cfg).unwrap(), theta: st.theta, alpha: st.alpha };
    (Forecaster::Fno(Box::new(model)), ds.series)
}

#[test]
fn report_is_the_average_of_per_instance_reports() {
    let (fno, test) = small_model(2);
    let models = [fno, Forecaster::Persistence];
    let all = evaluate(&models, &test, 2, Origins::All, 0.9).unwrap();
    assert_eq!(all.origins, vec![3, 4]);
    for (m, row) in all.models.iter().enumerate() {
        let per: Vec<_> = test
            .iter()
            .map(|s| evaluate(&models, std::slice::from_ref(s), 2, Origins::All, 0.9).unwrap().models[m].clone())
            .collect();
        let avg = per.iter().map(|r| r.mspe).sum::<f64>() / test.len() as f64;
        assert!((row.mspe - avg).abs() < 1e-12 * avg.max(1e-300));
        if let Some(c) = row.picp {
            let avg = per.iter().map(|r| r.picp.unwrap()).sum::<f64>() / test.len() as f64;
            assert!((c - avg).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&c));
            assert!(row.mpiw.unwrap() > 0.0);
        }
    }
}

#[test]
fn origins_are_shared_across_models() {
    let (long, test) = small_model(2);
    let (short, _) = small_model(0);
    let r = evaluate(&[short, long, Forecaster::Ide], &test, 2, Origins::All, 0.95).unwrap();
    assert_eq!(r.origins, vec![3, 4]);
    let last = evaluate(&[Forecaster::Persistence], &test, 2, Origins::Last, 0.95).unwrap();
    assert_eq!(last.origins, vec![4]);
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["models"].as_array().unwrap().len(), 3);
    assert!(r.to_table().contains("IDE"));
}
