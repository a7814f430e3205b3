//! Special functions: modified Bessel functions of the second kind and the
//! standard normal quantile.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

fn poly(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

// Abramowitz & Stegun 9.8.1 – 9.8.8.
const I0_SMALL: [f64; 7] = [
    1.0, 3.5156229, 3.0899424, 1.2067492, 0.2659732, 0.0360768, 0.0045813,
];
const I1_SMALL: [f64; 7] = [
    0.5, 0.87890594, 0.51498869, 0.15084934, 0.02658733, 0.00301532, 0.00032411,
];
const K0_SMALL: [f64; 7] = [
    -0.57721566, 0.42278420, 0.23069756, 0.03488590, 0.00262698, 0.00010750, 0.00000740,
];
const K0_LARGE: [f64; 7] = [
    1.25331414, -0.07832358, 0.02189568, -0.01062446, 0.00587872, -0.00251540, 0.00053208,
];
const K1_SMALL: [f64; 7] = [
    1.0, 0.15443144, -0.67278579, -0.18156897, -0.01919402, -0.00110404, -0.00004686,
];
const K1_LARGE: [f64; 7] = [
    1.25331414, 0.23498619, -0.03655620, 0.01504268, -0.00780353, 0.00325614, -0.00068245,
];

fn bessel_i0_small(x: f64) -> f64 {
    let t = x / 3.75;
    poly(&I0_SMALL, t * t)
}

fn bessel_i1_small(x: f64) -> f64 {
    let t = x / 3.75;
    x * poly(&I1_SMALL, t * t)
}

pub fn bessel_k0(x: f64) -> f64 {
    if x <= 2.0 {
        let y = x * x / 4.0;
        -(x / 2.0).ln() * bessel_i0_small(x) + poly(&K0_SMALL, y)
    } else {
        (-x).exp() / x.sqrt() * poly(&K0_LARGE, 2.0 / x)
    }
}

pub fn bessel_k1(x: f64) -> f64 {
    if x <= 2.0 {
        let y = x * x / 4.0;
        (x / 2.0).ln() * bessel_i1_small(x) + poly(&K1_SMALL, y) / x
    } else {
        (-x).exp() / x.sqrt() * poly(&K1_LARGE, 2.0 / x)
    }
}

/// `K_n(x)` for integer order by upward recurrence from `K_0`, `K_1`, using
/// the polynomial fits (relative error around 1e-7).
pub fn bessel_kn(n: u32, x: f64) -> f64 {
    let k0 = bessel_k0(x);
    if n == 0 {
        return k0;
    }
    let mut prev = k0;
    let mut cur = bessel_k1(x);
    for j in 1..n {
        let next = prev + 2.0 * j as f64 / x * cur;
        prev = cur;
        cur = next;
    }
    cur
}

/// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` by the trapezoidal rule.
///
/// The integrand is analytic and decays doubly exponentially, so the
/// trapezoidal rule converges geometrically in the step size.
fn bessel_k_integral(nu: f64, x: f64) -> f64 {
    // exp(-x cosh t + nu t) < 1e-300 well before this bound.
    let upper = ((700.0 + nu * 50.0) / x).max(2.0).acosh() + 1.0;
    let steps = 4000;
    let h = upper / steps as f64;
    let f = |t: f64| (-x * t.cosh()).exp() * (nu * t).cosh();
    let mut sum = 0.5 * (f(0.0) + f(upper));
    for i in 1..steps {
        sum += f(i as f64 * h);
    }
    sum * h
}

/// Modified Bessel function of the second kind, `x > 0`, `nu >= 0`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(x.is_finite() && nu.is_finite()) || x <= 0.0 || nu < 0.0 {
        return Err(Error::NonFinite(format!("bessel_k({nu}, {x})")));
    }
    if nu.fract() == 0.0 && nu <= 64.0 {
        Ok(bessel_kn(nu as u32, x))
    } else {
        Ok(bessel_k_integral(nu, x))
    }
}

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal quantile.
///
/// Acklam's rational approximation (relative error below 1.2e-9) followed by
/// one Halley step against the exact CDF.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!("probability {p} outside (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };

    let e = normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}
