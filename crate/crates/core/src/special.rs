//! Bessel functions of integer and half-integer order, and Γ(d/2).

use std::f64::consts::PI;

use crate::error::{Error, Result};

const SERIES_LIMIT: f64 = 1.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

/// Γ(d/2) with closed forms for d ≤ 4.
pub fn gamma_half(d: usize) -> f64 {
    match d {
        1 => PI.sqrt(),
        2 => 1.0,
        3 => 0.5 * PI.sqrt(),
        4 => 1.0,
        _ => statrs::function::gamma::gamma(d as f64 / 2.0),
    }
}

/// Validates the order; returns `true` for half-integer orders.
fn order_kind(nu: f64) -> Result<bool> {
    let twice = 2.0 * nu;
    if !(nu >= -0.5) || (twice - twice.round()).abs() > 1e-12 || nu > 64.0 {
        return Err(Error::InvalidArgument(format!(
            "Bessel order must be an integer or half-integer in [-1/2, 64], got {nu}"
        )));
    }
    Ok((twice.round() as i64) % 2 != 0)
}

/// Power series of Γ(ν+1)(2/x)^ν J_ν(x); equals 1 at x = 0.
fn reduced_series(nu: f64, x: f64) -> f64 {
    1.0 - complement_series(nu, x)
}

/// Series of 1 - Γ(ν+1)(2/x)^ν J_ν(x) without the leading 1.
fn complement_series(nu: f64, x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = q / (1.0 + nu);
    let mut sum = term;
    for k in 2..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + nu));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    -sum
}

fn series(nu: f64, x: f64) -> f64 {
    let g = statrs::function::gamma::gamma(nu + 1.0);
    reduced_series(nu, x) * (0.5 * x).powf(nu) / g
}

/// Hankel asymptotic expansion, accurate for x well beyond the order.
fn asymptotic(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let chi = x - (0.5 * nu + 0.25) * PI;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        term *= (mu - odd * odd) / (kf * 8.0 * x);
        if term.abs() > prev {
            break;
        }
        prev = term.abs();
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Miller backward recurrence normalised by J_0 + 2 Σ J_2k = 1.
fn miller(n: usize, x: f64) -> f64 {
    let top = n.max(x as usize);
    let mut m = top + 30 + (50.0 * top as f64).sqrt() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    let mut j_next = 0.0;
    let mut j = 1e-30;
    let mut sum = 0.0;
    let mut result = 0.0;
    for k in (1..=m).rev() {
        let j_prev = 2.0 * k as f64 / x * j - j_next;
        j_next = j;
        j = j_prev;
        if j.abs() > 1e250 {
            j *= 1e-250;
            j_next *= 1e-250;
            result *= 1e-250;
            sum *= 1e-250;
        }
        // j now holds J_{k-1}
        if k - 1 == n {
            result = j;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            sum += 2.0 * j;
        }
    }
    sum += j;
    result / sum
}

fn half_integer(nu: f64, x: f64) -> f64 {
    let norm = (2.0 / (PI * x)).sqrt();
    // J_{-1/2} and J_{1/2}, then upward recurrence J_{v+1} = (2v/x) J_v - J_{v-1}
    let mut j_prev = norm * x.cos();
    let mut j = norm * x.sin();
    if nu < 0.0 {
        return j_prev;
    }
    let mut v = 0.5;
    while v < nu - 1e-9 {
        let j_next = 2.0 * v / x * j - j_prev;
        j_prev = j;
        j = j_next;
        v += 1.0;
    }
    j
}

/// Bessel function of the first kind J_ν(x) for integer or half-integer ν ≥ -1/2.
pub fn bessel_j(nu: f64, x: f64) -> Result<f64> {
    let half = order_kind(nu)?;
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Bessel argument must be nonnegative, got {x}"
        )));
    }
    if x == 0.0 {
        return Ok(if nu == 0.0 {
            1.0
        } else if nu < 0.0 {
            f64::INFINITY
        } else {
            0.0
        });
    }
    let value = if half {
        if x > nu.max(SERIES_LIMIT) {
            half_integer(nu, x)
        } else {
            series(nu, x)
        }
    } else if x <= SERIES_LIMIT {
        series(nu, x)
    } else if x < ASYMPTOTIC_LIMIT.max(2.0 * nu * nu) {
        miller(nu.round() as usize, x)
    } else {
        asymptotic(nu, x)
    };
    Ok(value)
}

/// Γ(ν+1) (2/x)^ν J_ν(x), the Bessel function scaled to equal 1 at the origin.
///
/// This is the radial factor of an isotropic Fourier transform in `d = 2ν + 2`
/// dimensions and stays finite at `x = 0` for every order, including ν = -1/2.
pub fn bessel_j_reduced(nu: f64, x: f64) -> Result<f64> {
    order_kind(nu)?;
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Bessel argument must be nonnegative, got {x}"
        )));
    }
    if x <= SERIES_LIMIT {
        return Ok(reduced_series(nu, x));
    }
    let g = statrs::function::gamma::gamma(nu + 1.0);
    Ok(g * (2.0 / x).powf(nu) * bessel_j(nu, x)?)
}

/// `1 - bessel_j_reduced(nu, x)`, accurate for small `x`.
pub fn bessel_j_reduced_complement(nu: f64, x: f64) -> Result<f64> {
    order_kind(nu)?;
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Bessel argument must be nonnegative, got {x}"
        )));
    }
    if x <= SERIES_LIMIT {
        return Ok(complement_series(nu, x));
    }
    Ok(1.0 - bessel_j_reduced(nu, x)?)
}
