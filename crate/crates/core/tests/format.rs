use std::path::Path;

use fnodst::burgers::{generate_dataset, BurgersConfig, GammaMode};
use fnodst::format::{decode, encode, load_dataset, read_tensor, save_dataset, write_tensor, AnyTensor};
use fnodst::rng::{Purpose, Stream};
use fnodst::{ComplexTensor, RealTensor};
use num_complex::Complex64;
use proptest::prelude::*;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 0..5)
}

proptest! {
    #[test]
    fn real_round_trip(shape in shape_strategy(), seed in any::<u64>()) {
        let len = shape.iter().product();
        let mut s = Stream::new(seed, Purpose::Test, 0);
        let t = AnyTensor::Real(RealTensor::new(shape, (0..len).map(|_| s.normal()).collect()).unwrap());
        let mut bytes = Vec::new();
        encode(&mut bytes, &t);
        prop_assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), t);
    }

    #[test]
    fn complex_round_trip(shape in shape_strategy(), seed in any::<u64>()) {
        let len = shape.iter().product();
        let mut s = Stream::new(seed, Purpose::Test, 0);
        let data = (0..len).map(|_| Complex64::new(s.normal(), s.normal())).collect();
        let t = AnyTensor::Complex(ComplexTensor::new(shape, data).unwrap());
        let mut bytes = Vec::new();
        encode(&mut bytes, &t);
        prop_assert_eq!(decode(&bytes, Path::new("mem")).unwrap(), t);
    }

    #[test]
    fn truncation_is_an_error(cut in 1usize..40) {
        let t = AnyTensor::Real(RealTensor::new(vec![2, 3], vec![1.5; 6]).unwrap());
        let mut bytes = Vec::new();
        encode(&mut bytes, &t);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode(&bytes[..keep], Path::new("mem")).is_err());
    }
}

#[test]
fn special_values_survive() {
    let vals = vec![0.0, -0.0, f64::MIN_POSITIVE, f64::MAX, -1e-300, 1.0 / 3.0];
    let t = AnyTensor::Real(RealTensor::new(vec![6], vals.clone()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.fdst");
    write_tensor(&p, &t).unwrap();
    let AnyTensor::Real(back) = read_tensor(&p).unwrap() else { panic!("dtype changed") };
    for (a, b) in back.data().iter().zip(&vals) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn dataset_directory_round_trip() {
    let cfg = BurgersConfig { n: 16, t_model: 4, gamma_mode: GammaMode::RandomUniform { lo: 0.1, hi: 0.4 }, ..Default::default() };
    let ds = generate_dataset(&cfg, 3, 1, 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);

    std::fs::write(dir.path().join("instance_0001.fdst"), b"FDST1 garbage").unwrap();
    assert!(load_dataset(dir.path()).is_err());
}
