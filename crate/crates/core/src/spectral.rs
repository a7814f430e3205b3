//! Dense tensors and exact discrete Fourier transforms.
//!
//! The forward transform is unnormalized,
//! `X[k] = sum_x x[x] exp(-2 pi i k x / m)`, and the inverse carries the
//! `1/m` factor. Fast paths are radix-2 iterative Cooley–Tukey and therefore
//! need power-of-two lengths; [`dft_naive`] accepts any length and is kept as
//! the reference implementation.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type RealTensor = Tensor<f64>;
pub type ComplexTensor = Tensor<Complex64>;

/// Element types a [`Tensor`] may hold.
pub trait Element: Copy + Default + PartialEq + std::fmt::Debug {
    fn is_finite(&self) -> bool;
}

impl Element for f64 {
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl Element for Complex64 {
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::default(); len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }
}

impl RealTensor {
    pub fn to_complex(&self) -> ComplexTensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }
}

/// Per-axis grid sizes together with the number of retained modes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqGrid {
    m: Vec<usize>,
    m_tilde: Vec<usize>,
}

impl FreqGrid {
    pub fn new(m: Vec<usize>, m_tilde: Vec<usize>) -> Result<Self> {
        if m.len() != m_tilde.len() {
            return Err(Error::Shape("grid and mode ranks differ".into()));
        }
        for (axis, (&mj, &kj)) in m.iter().zip(&m_tilde).enumerate() {
            if !mj.is_power_of_two() {
                return Err(Error::NotPowerOfTwo(mj));
            }
            if kj == 0 || kj > mj {
                return Err(Error::Config(format!(
                    "axis {axis}: retained modes {kj} outside 1..={mj}"
                )));
            }
        }
        Ok(FreqGrid { m, m_tilde })
    }

    pub fn m(&self) -> &[usize] {
        &self.m
    }

    pub fn m_tilde(&self) -> &[usize] {
        &self.m_tilde
    }
}

/// Direct O(m^2) evaluation of the DFT.
pub fn dft_naive(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    let m = x.len();
    Ok((0..m)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(j, &v)| {
                    // Reduce k*j mod m first so the angle stays small and exact.
                    let phase = -TAU * ((k * j) % m) as f64 / m as f64;
                    v * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect())
}

/// Precomputed twiddles and bit-reversal table for one transform length.
#[derive(Clone, Debug)]
pub struct FftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    rev: Vec<usize>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptySignal);
        }
        if !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -TAU * k as f64 / n as f64))
            .collect();
        let bits = n.trailing_zeros();
        let rev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        Ok(FftPlan { n, twiddles, rev })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, buf: &[Complex64]) -> Result<()> {
        if buf.len() != self.n {
            return Err(Error::Shape(format!(
                "plan for length {} applied to length {}",
                self.n,
                buf.len()
            )));
        }
        Ok(())
    }

    fn butterflies(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * step];
                    let w = if inverse { w.conj() } else { w };
                    let u = buf[start + k];
                    let v = buf[start + k + half] * w;
                    buf[start + k] = u + v;
                    buf[start + k + half] = u - v;
                }
            }
            len <<= 1;
        }
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) -> Result<()> {
        self.check(buf)?;
        self.butterflies(buf, false);
        Ok(())
    }

    /// In-place inverse transform including the `1/n` factor.
    pub fn inverse(&self, buf: &mut [Complex64]) -> Result<()> {
        self.check(buf)?;
        self.butterflies(buf, true);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
        Ok(())
    }
}

pub fn fft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.to_vec();
    plan.forward(&mut out)?;
    Ok(out)
}

pub fn ifft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    let plan = FftPlan::new(x.len())?;
    let mut out = x.to_vec();
    plan.inverse(&mut out)?;
    Ok(out)
}

/// Apply `f` to every 1-D lane of `t` running along `axis`.
fn for_each_lane(
    t: &mut ComplexTensor,
    axis: usize,
    mut f: impl FnMut(&mut [Complex64]) -> Result<()>,
) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::Shape(format!(
            "axis {axis} out of range for rank {}",
            t.rank()
        )));
    }
    let extent = t.shape[axis];
    let stride = t.strides()[axis];
    let outer: usize = t.shape[..axis].iter().product();
    let mut lane = vec![Complex64::default(); extent];
    for o in 0..outer {
        let base = o * extent * stride;
        for inner in 0..stride {
            let start = base + inner;
            for (i, slot) in lane.iter_mut().enumerate() {
                *slot = t.data[start + i * stride];
            }
            f(&mut lane)?;
            for (i, v) in lane.iter().enumerate() {
                t.data[start + i * stride] = *v;
            }
        }
    }
    Ok(())
}

fn transform_nd(t: &ComplexTensor, axes: &[usize], inverse: bool) -> Result<ComplexTensor> {
    let mut out = t.clone();
    for &axis in axes {
        let extent = *t
            .shape
            .get(axis)
            .ok_or_else(|| Error::Shape(format!("axis {axis} out of range")))?;
        let plan = FftPlan::new(extent)?;
        for_each_lane(&mut out, axis, |lane| {
            if inverse {
                plan.inverse(lane)
            } else {
                plan.forward(lane)
            }
        })?;
    }
    Ok(out)
}

/// Separable forward transform along each listed axis.
pub fn fft_nd(t: &ComplexTensor, axes: &[usize]) -> Result<ComplexTensor> {
    transform_nd(t, axes, false)
}

/// Separable inverse transform along each listed axis.
pub fn ifft_nd(t: &ComplexTensor, axes: &[usize]) -> Result<ComplexTensor> {
    transform_nd(t, axes, true)
}

/// Forward transform of a real tensor along its last axis, keeping the
/// `m/2 + 1` non-negative frequencies.
pub fn rfft_last_axis(t: &RealTensor) -> Result<ComplexTensor> {
    let m = *t.shape.last().ok_or(Error::EmptySignal)?;
    let plan = FftPlan::new(m)?;
    let half = m / 2 + 1;
    let rows = t.len() / m;
    let mut data = Vec::with_capacity(rows * half);
    let mut buf = vec![Complex64::default(); m];
    for row in t.data.chunks_exact(m) {
        for (slot, &x) in buf.iter_mut().zip(row) {
            *slot = Complex64::new(x, 0.0);
        }
        plan.forward(&mut buf)?;
        data.extend_from_slice(&buf[..half]);
    }
    let mut shape = t.shape.clone();
    *shape.last_mut().unwrap() = half;
    Ok(Tensor { shape, data })
}

/// Rebuild the full conjugate-symmetric spectrum of length `m` from its
/// non-negative half.
pub fn hermitian_extend(half: &[Complex64], m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|k| {
            if k < half.len() {
                half[k]
            } else {
                half[m - k].conj()
            }
        })
        .collect()
}

/// Inverse of [`rfft_last_axis`]; `m` is the original length of the last axis.
///
/// The half spectrum is extended by conjugate symmetry and inverted; the real
/// part is returned. For a spectrum that came from real data the discarded
/// imaginary part is pure rounding noise.
pub fn irfft_last_axis(t: &ComplexTensor, m: usize) -> Result<RealTensor> {
    let plan = FftPlan::new(m)?;
    let half = m / 2 + 1;
    if t.shape.last() != Some(&half) {
        return Err(Error::Shape(format!(
            "last extent {:?} is not {half} for m = {m}",
            t.shape.last()
        )));
    }
    let mut data = Vec::with_capacity(t.len() / half * m);
    for row in t.data.chunks_exact(half) {
        let mut buf = hermitian_extend(row, m);
        plan.inverse(&mut buf)?;
        data.extend(buf.iter().map(|c| c.re));
    }
    let mut shape = t.shape.clone();
    *shape.last_mut().unwrap() = m;
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Stream};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn random_signal(n: usize, index: u64) -> Vec<Complex64> {
        let mut s = Stream::new(42, Purpose::Test, index);
        (0..n).map(|_| Complex64::new(s.normal(), s.normal())).collect()
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn naive_dft_fixed_points() {
        let out = dft_naive(&[c(1.0); 4]).unwrap();
        assert!(max_abs_diff(&out, &[c(4.0), c(0.0), c(0.0), c(0.0)]) < 1e-14);
        let out = dft_naive(&[c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert!(max_abs_diff(&out, &[c(1.0); 4]) < 1e-14);
        assert!(matches!(dft_naive(&[]), Err(Error::EmptySignal)));
    }

    #[test]
    fn naive_dft_matches_double_loop() {
        let x = random_signal(8, 0);
        let got = dft_naive(&x).unwrap();
        for k in 0..8 {
            let mut re = 0.0;
            let mut im = 0.0;
            for (j, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / 8.0;
                re += v.re * a.cos() - v.im * a.sin();
                im += v.re * a.sin() + v.im * a.cos();
            }
            assert!((got[k] - Complex64::new(re, im)).norm() < 1e-12);
        }
    }

    #[test]
    fn fft_rejects_bad_lengths() {
        assert!(matches!(fft(&[c(1.0); 6]), Err(Error::NotPowerOfTwo(6))));
        assert!(matches!(ifft(&[c(1.0); 3]), Err(Error::NotPowerOfTwo(3))));
        assert!(matches!(fft(&[]), Err(Error::EmptySignal)));
    }

    #[test]
    fn fft_constant_and_inverse() {
        let out = fft(&[c(1.0); 4]).unwrap();
        assert!(max_abs_diff(&out, &[c(4.0), c(0.0), c(0.0), c(0.0)]) < 1e-14);
        let back = ifft(&[c(4.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert!(max_abs_diff(&back, &[c(1.0); 4]) < 1e-14);
    }

    #[test]
    fn fft_length_one() {
        let x = [Complex64::new(2.5, -1.0)];
        assert_eq!(fft(&x).unwrap(), x.to_vec());
        assert_eq!(ifft(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn roundtrip_and_parseval() {
        let x = random_signal(64, 1);
        let big_x = fft(&x).unwrap();
        assert!(max_abs_diff(&ifft(&big_x).unwrap(), &x) < 1e-10);
        assert!(max_abs_diff(&fft(&ifft(&x).unwrap()).unwrap(), &x) < 1e-10);
        let lhs: f64 = x.iter().map(|v| v.norm_sqr()).sum();
        let rhs: f64 = big_x.iter().map(|v| v.norm_sqr()).sum::<f64>() / 64.0;
        assert!((lhs - rhs).abs() < 1e-9 * lhs.max(1.0));
    }

    #[test]
    fn fft_matches_naive_at_1024() {
        let x = random_signal(1024, 2);
        let fast = fft(&x).unwrap();
        let slow = dft_naive(&x).unwrap();
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).norm() / s.norm().max(1e-12) < 1e-10);
        }
    }

    #[test]
    fn nd_constant_and_axis_order() {
        let t = ComplexTensor::new(vec![4, 4], vec![c(1.0); 16]).unwrap();
        let f = fft_nd(&t, &[0, 1]).unwrap();
        assert!((f.get(&[0, 0]) - c(16.0)).norm() < 1e-13);
        let rest: f64 = f.data()[1..].iter().map(|v| v.norm()).sum();
        assert!(rest < 1e-12);

        let mut s = Stream::new(5, Purpose::Test, 9);
        let data: Vec<_> = (0..32).map(|_| Complex64::new(s.normal(), s.normal())).collect();
        let t = ComplexTensor::new(vec![4, 8], data).unwrap();
        let a = fft_nd(&t, &[0, 1]).unwrap();
        let b = fft_nd(&t, &[1, 0]).unwrap();
        assert!(max_abs_diff(a.data(), b.data()) < 1e-10);
        let back = ifft_nd(&a, &[1, 0]).unwrap();
        assert!(max_abs_diff(back.data(), t.data()) < 1e-12);
    }

    #[test]
    fn nd_matches_nested_naive() {
        let x = random_signal(64, 3);
        let t = ComplexTensor::new(vec![8, 8], x.clone()).unwrap();
        let fast = fft_nd(&t, &[0, 1]).unwrap();
        // rows first, then columns, all with the naive DFT
        let mut rows: Vec<Vec<Complex64>> = x.chunks(8).map(|r| dft_naive(r).unwrap()).collect();
        for col in 0..8 {
            let column: Vec<_> = rows.iter().map(|r| r[col]).collect();
            let out = dft_naive(&column).unwrap();
            for (r, v) in rows.iter_mut().zip(out) {
                r[col] = v;
            }
        }
        let slow: Vec<_> = rows.concat();
        for (f, s) in fast.data().iter().zip(&slow) {
            assert!((f - s).norm() / s.norm().max(1e-12) < 1e-10);
        }
    }

    #[test]
    fn rfft_constant_row() {
        let t = RealTensor::new(vec![4], vec![2.0; 4]).unwrap();
        let r = rfft_last_axis(&t).unwrap();
        assert_eq!(r.shape(), &[3]);
        assert!(max_abs_diff(r.data(), &[c(8.0), c(0.0), c(0.0)]) < 1e-14);
    }

    #[test]
    fn rfft_matches_full_fft_and_roundtrips() {
        let mut s = Stream::new(8, Purpose::Test, 0);
        let data: Vec<f64> = (0..3 * 8).map(|_| s.normal()).collect();
        let t = RealTensor::new(vec![3, 8], data.clone()).unwrap();
        let half = rfft_last_axis(&t).unwrap();
        assert_eq!(half.shape(), &[3, 5]);
        for (row, hrow) in data.chunks(8).zip(half.data().chunks(5)) {
            let full = fft(&row.iter().map(|&v| c(v)).collect::<Vec<_>>()).unwrap();
            assert!(max_abs_diff(&full[..5], hrow) < 1e-12);
            // the full inverse of the extended spectrum is real
            let inv = ifft(&hermitian_extend(hrow, 8)).unwrap();
            assert!(inv.iter().map(|v| v.im.abs()).fold(0.0, f64::max) < 1e-10);
        }
        let back = irfft_last_axis(&half, 8).unwrap();
        for (a, b) in back.data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn tensor_validation() {
        assert!(RealTensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(RealTensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(RealTensor::new(vec![0], vec![]).is_err());
        let t = RealTensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(&[1, 2]), 5.0);
        assert_eq!(t.strides(), vec![3, 1]);
    }

    #[test]
    fn freq_grid_validation() {
        assert!(FreqGrid::new(vec![8, 4], vec![4, 2]).is_ok());
        assert!(FreqGrid::new(vec![6], vec![2]).is_err());
        assert!(FreqGrid::new(vec![8], vec![9]).is_err());
        assert!(FreqGrid::new(vec![8], vec![0]).is_err());
    }
}
