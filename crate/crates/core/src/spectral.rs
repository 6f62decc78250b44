//! Model side: band-limited SSRF spectral density, covariance, semivariogram
//! and the stochastic constraints.
//!
//! With `u = k ξ` the covariance is a Hankel-type transform over the band
//! `u ∈ [0, kc ξ]`:
//!
//! `G(a) = η0 C_d ∫ 2 u^(d-1) Λ_ν(a u / ξ) / Π(u²) du`,
//! `C_d = 1 / (2^d π^(d/2) Γ(d/2))`, `ν = d/2 - 1`,
//!
//! where `Λ_ν(x) = Γ(ν+1) (2/x)^ν J_ν(x)` is the reduced Bessel function
//! (`Λ_ν(0) = 1`). Working in `u` keeps the integrand smooth at the origin in
//! every dimension.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constraints::{c1, c2, c3};
use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::quadrature::integrate;
use crate::special::{bessel_j_reduced, bessel_j_reduced_complement, gamma_half};

/// `θ = (η0, η1, ξ, kc)`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsrfParams {
    pub eta0: f64,
    pub eta1: f64,
    pub xi: f64,
    pub kc: f64,
}

impl SsrfParams {
    pub fn new(eta0: f64, eta1: f64, xi: f64, kc: f64) -> Result<Self> {
        let p = SsrfParams { eta0, eta1, xi, kc };
        p.validate()?;
        Ok(p)
    }

    /// Positivity of the scale parameters plus permissibility over the band.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta0", self.eta0), ("xi", self.xi), ("kc", self.kc)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.eta1.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "eta1 must be finite, got {}",
                self.eta1
            )));
        }
        check_permissible(self.eta1, self.kc_xi())
    }

    pub fn kc_xi(&self) -> f64 {
        self.kc * self.xi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub relative_tolerance: f64,
    pub max_subdivisions: usize,
    /// Pre-split the band at approximate Bessel zeros when `a kc > 20`.
    pub oscillatory_split: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            relative_tolerance: 1e-8,
            max_subdivisions: 2000,
            oscillatory_split: true,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative_tolerance > 0.0 && self.relative_tolerance <= 1e-3) {
            return Err(Error::InvalidArgument(format!(
                "relative tolerance must lie in (0, 1e-3], got {}",
                self.relative_tolerance
            )));
        }
        if self.max_subdivisions < 16 {
            return Err(Error::InvalidArgument(format!(
                "max_subdivisions must be at least 16, got {}",
                self.max_subdivisions
            )));
        }
        Ok(())
    }
}

const OSCILLATION_THRESHOLD: f64 = 20.0;
const PERMISSIBILITY_GRID: usize = 1024;
const PERMISSIBILITY_FLOOR: f64 = 1e-12;

/// `Π(v) = 1 + η1 v + v²`
pub fn pi_poly(eta1: f64, v: f64) -> f64 {
    1.0 + eta1 * v + v * v
}

/// Smallest value of `Π` on the band `[0, (kc ξ)²]`: a uniform grid plus the vertex.
pub fn min_pi_on_band(eta1: f64, kc_xi: f64) -> f64 {
    let vmax = kc_xi * kc_xi;
    let mut min = (0..=PERMISSIBILITY_GRID)
        .map(|k| pi_poly(eta1, vmax * k as f64 / PERMISSIBILITY_GRID as f64))
        .fold(f64::INFINITY, f64::min);
    let vertex = -eta1 / 2.0;
    if vertex > 0.0 && vertex < vmax {
        min = min.min(pi_poly(eta1, vertex));
    }
    min
}

pub fn check_permissible(eta1: f64, kc_xi: f64) -> Result<()> {
    let min_pi = min_pi_on_band(eta1, kc_xi);
    if min_pi > PERMISSIBILITY_FLOOR {
        Ok(())
    } else {
        Err(Error::Impermissible { min_pi })
    }
}

/// `C_d = 1 / (2^d π^(d/2) Γ(d/2))`
fn spectral_constant(d: usize) -> f64 {
    1.0 / (2f64.powi(d as i32) * PI.powf(d as f64 / 2.0) * gamma_half(d))
}

fn check_dimension(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(())
}

fn check_lag(a: f64) -> Result<()> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::InvalidArgument(format!("lag must be nonnegative, got {a}")));
    }
    Ok(())
}

/// Approximate zeros of `J_ν(a u / ξ)` in `u`, used as quadrature breakpoints.
fn oscillation_breakpoints(nu: f64, scale: f64, umax: f64, q: &QuadratureConfig) -> Vec<f64> {
    if !q.oscillatory_split || scale * umax <= OSCILLATION_THRESHOLD {
        return Vec::new();
    }
    let phase = nu / 2.0 - 0.25;
    (1..)
        .map(|k| (k as f64 + phase) * PI / scale)
        .take_while(|&u| u < umax)
        .filter(|&u| u > 0.0)
        .collect()
}

/// `∫_0^{kc ξ} 2 u^(d-1) w(u) / Π(u²) du` for a radial weight `w`.
fn band_integral<W>(
    eta1: f64,
    kc_xi: f64,
    d: usize,
    breakpoints: &[f64],
    q: &QuadratureConfig,
    weight: W,
) -> Result<f64>
where
    W: Fn(f64) -> f64,
{
    q.validate()?;
    let p = d as i32 - 1;
    let f = |u: f64| 2.0 * u.powi(p) * weight(u) / pi_poly(eta1, u * u);
    let est = integrate(
        f,
        0.0,
        kc_xi,
        breakpoints,
        q.relative_tolerance,
        0.0,
        q.max_subdivisions,
    )?;
    if !est.value.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(est.value)
}

/// `S0' = ∫_0^{(kc ξ)²} v^(d/2-1) / Π(v) dv`
pub fn normalization_integral(eta1: f64, kc_xi: f64, d: usize, q: &QuadratureConfig) -> Result<f64> {
    check_dimension(d)?;
    if !(kc_xi >= 0.0 && kc_xi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "kc*xi must be nonnegative, got {kc_xi}"
        )));
    }
    if kc_xi == 0.0 {
        return Ok(0.0);
    }
    check_permissible(eta1, kc_xi)?;
    band_integral(eta1, kc_xi, d, &[], q, |_| 1.0)
}

/// `E[S0] = G(0) = η0 C_d S0'`
pub fn variance_constraint(params: &SsrfParams, d: usize, q: &QuadratureConfig) -> Result<f64> {
    params.validate()?;
    Ok(params.eta0 * spectral_constant(d) * normalization_integral(params.eta1, params.kc_xi(), d, q)?)
}

/// Reduced Bessel weight as a closure; the order is validated once up front.
fn reduced_weight(nu: f64, scale: f64) -> Result<impl Fn(f64) -> f64> {
    bessel_j_reduced(nu, 1.0)?;
    Ok(move |u: f64| bessel_j_reduced(nu, scale * u).unwrap_or(f64::NAN))
}

/// Covariance `G(a)` at lag `a`.
pub fn covariance(params: &SsrfParams, a: f64, d: usize, q: &QuadratureConfig) -> Result<f64> {
    check_lag(a)?;
    check_dimension(d)?;
    if a == 0.0 {
        return variance_constraint(params, d, q);
    }
    params.validate()?;
    let nu = d as f64 / 2.0 - 1.0;
    let scale = a / params.xi;
    let bps = oscillation_breakpoints(nu, scale, params.kc_xi(), q);
    let w = reduced_weight(nu, scale)?;
    Ok(params.eta0 * spectral_constant(d) * band_integral(params.eta1, params.kc_xi(), d, &bps, q, w)?)
}

/// Semivariogram `F(a) = G(0) - G(a)`, integrated directly with the weight
/// `1 - Λ_ν` so that small lags do not lose digits to cancellation.
pub fn semivariogram(params: &SsrfParams, a: f64, d: usize, q: &QuadratureConfig) -> Result<f64> {
    check_lag(a)?;
    check_dimension(d)?;
    params.validate()?;
    if a == 0.0 {
        return Ok(0.0);
    }
    let nu = d as f64 / 2.0 - 1.0;
    let scale = a / params.xi;
    let bps = oscillation_breakpoints(nu, scale, params.kc_xi(), q);
    bessel_j_reduced_complement(nu, 1.0)?;
    let w = |u: f64| bessel_j_reduced_complement(nu, scale * u).unwrap_or(f64::NAN);
    let value = band_integral(params.eta1, params.kc_xi(), d, &bps, q, w)?;
    Ok(params.eta0 * spectral_constant(d) * value)
}

fn check_step(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {a}")));
    }
    Ok(())
}

/// `φ1(a1) = c1 F(a1)` and `E[S1] = φ1 / a1²`.
pub fn gradient_stoch(params: &SsrfParams, a1: f64, d: usize, q: &QuadratureConfig) -> Result<(f64, f64)> {
    check_step(a1)?;
    let phi1 = c1(d) * semivariogram(params, a1, d, q)?;
    Ok((phi1, phi1 / (a1 * a1)))
}

/// `φ2(a2) = c2 F(a2) - c3 F(√2 a2) - c1 F(2 a2)` and `E[S2] = φ2 / a2⁴`.
pub fn curvature_stoch(params: &SsrfParams, a2: f64, d: usize, q: &QuadratureConfig) -> Result<(f64, f64)> {
    check_step(a2)?;
    let f1 = semivariogram(params, a2, d, q)?;
    let fr = if d > 1 {
        semivariogram(params, std::f64::consts::SQRT_2 * a2, d, q)?
    } else {
        0.0
    };
    let f2 = semivariogram(params, 2.0 * a2, d, q)?;
    let phi2 = c2(d) * f1 - c3(d) * fr - c1(d) * f2;
    Ok((phi2, phi2 / a2.powi(4)))
}

/// `η0 = 2^d π^(d/2) Γ(d/2) σ²`
pub fn eta0_from_variance(sigma2: f64, d: usize) -> Result<f64> {
    check_dimension(d)?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "variance must be positive, got {sigma2}"
        )));
    }
    Ok(sigma2 / spectral_constant(d))
}

/// All four model constraints for one parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticConstraints {
    pub s0: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub s1: f64,
    pub s2: f64,
}

pub fn stochastic_constraints(
    params: &SsrfParams,
    a1: f64,
    a2: f64,
    d: usize,
    q: &QuadratureConfig,
) -> Result<StochasticConstraints> {
    let s0 = variance_constraint(params, d, q)?;
    let (phi1, s1) = gradient_stoch(params, a1, d, q)?;
    let (phi2, s2) = curvature_stoch(params, a2, d, q)?;
    Ok(StochasticConstraints { s0, phi1, phi2, s1, s2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lag: f64,
    pub covariance: f64,
    pub correlation: f64,
}

/// `count` uniformly spaced intervals on `[0, max]`, endpoints included.
pub fn uniform_lags(max: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|k| max * k as f64 / count as f64).collect()
}

/// Lag grid used by the fit-quality plots: 10 intervals on `[0, 1.2]`.
pub fn default_lags() -> Vec<f64> {
    uniform_lags(1.2, 10)
}

pub fn covariance_curve(params: &SsrfParams, d: usize, lags: &[f64], q: &QuadratureConfig) -> Result<Vec<CurvePoint>> {
    let g0 = variance_constraint(params, d, q)?;
    lags.iter()
        .map(|&lag| {
            let covariance = covariance(params, lag, d, q)?;
            Ok(CurvePoint {
                lag,
                covariance,
                correlation: covariance / g0,
            })
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["lag", "covariance", "correlation"])?;
    for p in points {
        wtr.write_record([sig(p.lag), sig(p.covariance), sig(p.correlation)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::bessel_j;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn params(eta1: f64, kc_xi: f64) -> SsrfParams {
        SsrfParams::new(1.0, eta1, 1.0, kc_xi).unwrap()
    }

    #[test]
    fn pi_examples() {
        assert_eq!(pi_poly(0.0, 1.0), 2.0);
        assert_eq!(pi_poly(2.0, 1.0), 4.0);
        assert_eq!(pi_poly(-2.0, 1.0), 0.0);
    }

    #[test]
    fn permissibility() {
        assert!(check_permissible(-1.9, 100.0).is_ok());
        assert!(matches!(check_permissible(-2.0, 2.0), Err(Error::Impermissible { .. })));
        assert!(matches!(
            check_permissible(-3.0, 10.0),
            Err(Error::Impermissible { .. })
        ));
        // roots of Π lie outside a narrow band
        assert!(check_permissible(-3.0, 0.5).is_ok());
        assert!(SsrfParams::new(1.0, -5.0, 1.0, 10.0).is_err());
        assert!(SsrfParams::new(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn quadrature_config_limits() {
        assert!(QuadratureConfig {
            relative_tolerance: 1e-2,
            ..q()
        }
        .validate()
        .is_err());
        assert!(QuadratureConfig {
            max_subdivisions: 8,
            ..q()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_relative_eq!(
            normalization_integral(0.0, 1.0, 2, &q()).unwrap(),
            PI / 4.0,
            max_relative = 1e-10
        );
        for v in [0.5f64, 3.0, 40.0] {
            let got = normalization_integral(2.0, v.sqrt(), 2, &q()).unwrap();
            assert_relative_eq!(got, v / (1.0 + v), max_relative = 1e-10);
        }
        assert_eq!(normalization_integral(1.0, 0.0, 2, &q()).unwrap(), 0.0);
        assert!(normalization_integral(1.0, 1e-4, 3, &q()).unwrap() < 1e-11);
        // d = 1: ∫ v^(-1/2)/(1+v)² dv over [0, 1] = 1/2 + π/4
        assert_relative_eq!(
            normalization_integral(2.0, 1.0, 1, &q()).unwrap(),
            0.5 + PI / 4.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn variance_examples() {
        let p = SsrfParams::new(2.5, 0.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(
            variance_constraint(&p, 2, &q()).unwrap(),
            2.5 / (4.0 * PI) * PI / 4.0,
            max_relative = 1e-10
        );
        let eta0 = eta0_from_variance(0.7, 3).unwrap();
        let p = SsrfParams::new(eta0, 1.3, 0.4, 12.0).unwrap();
        let s0p = normalization_integral(1.3, p.kc_xi(), 3, &q()).unwrap();
        assert_relative_eq!(
            variance_constraint(&p, 3, &q()).unwrap(),
            0.7 * s0p,
            max_relative = 1e-10
        );
    }

    #[test]
    fn eta0_examples() {
        assert_relative_eq!(eta0_from_variance(1.0, 2).unwrap(), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(eta0_from_variance(1.0, 3).unwrap(), 4.0 * PI * PI, max_relative = 1e-14);
        assert_relative_eq!(eta0_from_variance(0.25, 2).unwrap(), PI, max_relative = 1e-14);
        assert!(eta0_from_variance(0.0, 2).is_err());
    }

    #[test]
    fn covariance_at_origin_is_variance() {
        let p = params(0.7, 6.0);
        assert_eq!(
            covariance(&p, 0.0, 2, &q()).unwrap(),
            variance_constraint(&p, 2, &q()).unwrap()
        );
    }

    #[test]
    fn covariance_against_trapezoid_oracle() {
        // 10^6-point trapezoid rule in v on [0, 100] for η0 = ξ = 1
        let oracle = 0.059_060_565_447_488_82;
        let got = covariance(&params(1.0, 10.0), 1.0, 2, &q()).unwrap();
        assert_relative_eq!(got, oracle, max_relative = 1e-8);
    }

    #[test]
    fn exponential_equivalence_long_band() {
        let p = params(2.0, 1000.0);
        let g0 = variance_constraint(&p, 3, &q()).unwrap();
        for k in 1..=50 {
            let a = 0.1 * k as f64;
            let rho = covariance(&p, a, 3, &q()).unwrap() / g0;
            assert!((rho - (-a).exp()).abs() < 0.01, "a = {a}: rho = {rho}");
        }
    }

    #[test]
    fn semivariogram_examples() {
        let p = params(1.0, 8.0);
        assert_eq!(semivariogram(&p, 0.0, 2, &q()).unwrap(), 0.0);
        let g0 = variance_constraint(&p, 2, &q()).unwrap();
        let far = semivariogram(&p, 20.0, 2, &q()).unwrap();
        assert!((far - g0).abs() < 0.02 * g0);
        let g = covariance(&p, 0.8, 2, &q()).unwrap();
        assert_relative_eq!(semivariogram(&p, 0.8, 2, &q()).unwrap(), g0 - g, max_relative = 1e-7);

        let e = params(2.0, 100.0);
        let g0 = variance_constraint(&e, 3, &q()).unwrap();
        let f = semivariogram(&e, 1.0, 3, &q()).unwrap();
        assert!((f - g0 * (1.0 - (-1.0f64).exp())).abs() <= 0.01 * g0 * (1.0 - (-1.0f64).exp()));
    }

    #[test]
    fn stochastic_constraint_constants() {
        let p = params(1.0, 5.0);
        let f = semivariogram(&p, 0.3, 2, &q()).unwrap();
        let (phi1, s1) = gradient_stoch(&p, 0.3, 2, &q()).unwrap();
        assert_relative_eq!(phi1, 4.0 * f, max_relative = 1e-14);
        assert_relative_eq!(s1, phi1 / 0.09, max_relative = 1e-14);
        let (phi1_small, _) = gradient_stoch(&p, 1e-6, 2, &q()).unwrap();
        assert!(phi1_small < 1e-9);
        let (phi2_small, _) = curvature_stoch(&p, 1e-5, 2, &q()).unwrap();
        assert!(phi2_small.abs() < 1e-8);
        let (c1, c2, c3) = (c1(2), c2(2), c3(2));
        assert_eq!((c1, c2, c3), (4.0, 32.0, 8.0));
    }

    /// Direct spectral form of `E[S1]` in `v`, using the unreduced Bessel function.
    fn s1_spectral(p: &SsrfParams, a: f64, d: usize) -> f64 {
        let nu = d as f64 / 2.0 - 1.0;
        let sigma2 = p.eta0 / (2f64.powi(d as i32) * PI.powf(d as f64 / 2.0) * gamma_half(d));
        let gamma_d = (2.0 * p.xi).powf(nu) * gamma_half(d);
        let f = |v: f64| {
            let w = v.sqrt() / p.xi;
            (v.powf(nu) - gamma_d * v.powf(nu / 2.0) * bessel_j(nu, a * w).unwrap() / a.powf(nu)) / pi_poly(p.eta1, v)
        };
        let vmax = p.kc_xi().powi(2);
        let bps: Vec<f64> = (1..400)
            .map(|k| (k as f64 * PI * p.xi / a).powi(2))
            .filter(|&v| v < vmax)
            .collect();
        let i = integrate(f, 0.0, vmax, &bps, 1e-12, 0.0, 5000).unwrap().value;
        c1(d) * sigma2 * i / (a * a)
    }

    /// Direct spectral form of `E[S2]`.
    fn s2_spectral(p: &SsrfParams, a: f64, d: usize) -> f64 {
        let nu = d as f64 / 2.0 - 1.0;
        let df = d as f64;
        let sigma2 = p.eta0 / (2f64.powi(d as i32) * PI.powf(df / 2.0) * gamma_half(d));
        let gamma_d = (2.0 * p.xi).powf(nu) * gamma_half(d);
        let (c1, c2, c3) = (c1(d), c2(d), c3(d));
        let f = |v: f64| {
            let w = v.sqrt() / p.xi;
            let j = |x: f64| bessel_j(nu, x).unwrap();
            let bracket = c2 * j(a * w)
                - c3 * j(a * std::f64::consts::SQRT_2 * w) / 2f64.powf(df / 4.0 - 0.5)
                - c1 * j(2.0 * a * w) / 2f64.powf(df / 2.0 - 1.0);
            ((c3 + 3.0 * c1) * v.powf(nu) - gamma_d * v.powf(nu / 2.0) / a.powf(nu) * bracket) / pi_poly(p.eta1, v)
        };
        let vmax = p.kc_xi().powi(2);
        let bps: Vec<f64> = (1..800)
            .map(|k| (k as f64 * PI * p.xi / (2.0 * a)).powi(2))
            .filter(|&v| v < vmax)
            .collect();
        let i = integrate(f, 0.0, vmax, &bps, 1e-12, 0.0, 5000).unwrap().value;
        sigma2 * i / a.powi(4)
    }

    #[test]
    fn spectral_route_agrees_with_semivariogram_route() {
        let p = SsrfParams::new(3.0, 1.0, 1.0, 5.0).unwrap();
        let (_, s1) = gradient_stoch(&p, 0.3, 2, &q()).unwrap();
        let (_, s2) = curvature_stoch(&p, 0.3, 2, &q()).unwrap();
        assert_relative_eq!(s1, s1_spectral(&p, 0.3, 2), max_relative = 1e-6);
        assert_relative_eq!(s2, s2_spectral(&p, 0.3, 2), max_relative = 1e-6);
        let p3 = SsrfParams::new(0.5, -1.2, 0.7, 9.0).unwrap();
        let (_, s1) = gradient_stoch(&p3, 0.4, 3, &q()).unwrap();
        let (_, s2) = curvature_stoch(&p3, 0.4, 3, &q()).unwrap();
        assert_relative_eq!(s1, s1_spectral(&p3, 0.4, 3), max_relative = 1e-6);
        assert_relative_eq!(s2, s2_spectral(&p3, 0.4, 3), max_relative = 1e-6);
    }

    #[test]
    fn curve_csv_layout() {
        let p = params(1.0, 5.0);
        let lags = default_lags();
        assert_eq!(lags.len(), 11);
        assert_relative_eq!(lags[10], 1.2);
        let pts = covariance_curve(&p, 2, &lags, &q()).unwrap();
        assert_eq!(pts[0].correlation, 1.0);
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lag,covariance,correlation\n"));
        assert_eq!(text.lines().count(), 12);
    }

    #[test]
    fn split_and_unsplit_agree() {
        let p = params(0.5, 60.0);
        let split = covariance(&p, 2.0, 2, &q()).unwrap();
        let plain = covariance(
            &p,
            2.0,
            2,
            &QuadratureConfig {
                oscillatory_split: false,
                ..q()
            },
        )
        .unwrap();
        assert_relative_eq!(split, plain, max_relative = 1e-6, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn covariance_bounded_by_variance(eta1 in -1.9f64..5.0, kc_xi in 0.5f64..30.0, d in 1usize..=3) {
            let p = params(eta1, kc_xi);
            let g0 = variance_constraint(&p, d, &q()).unwrap();
            for k in 1..=12 {
                let g = covariance(&p, 0.25 * k as f64, d, &q()).unwrap();
                prop_assert!(g.abs() <= g0 * (1.0 + 1e-9));
            }
        }

        #[test]
        fn normalization_monotone(eta1 in -1.9f64..5.0, kc_xi in 0.5f64..30.0, d in 1usize..=3) {
            let base = normalization_integral(eta1, kc_xi, d, &q()).unwrap();
            prop_assert!(normalization_integral(eta1, kc_xi * 1.1, d, &q()).unwrap() > base);
            prop_assert!(normalization_integral(eta1 + 0.1, kc_xi, d, &q()).unwrap() < base);
        }

        #[test]
        fn gradient_constraint_nonnegative(eta1 in -1.9f64..5.0, kc_xi in 0.5f64..30.0, a in 0.05f64..3.0) {
            let (phi1, _) = gradient_stoch(&params(eta1, kc_xi), a, 2, &q()).unwrap();
            prop_assert!(phi1 >= 0.0);
        }
    }
}
