//! Radial weighting kernels, their moments, and the bandwidth rules derived from them.
//!
//! All kernels act on the normalized distance `s = r / h`. The three polynomial
//! families are supported on `[0, 1]`; the Gaussian is truncated at
//! [`GAUSSIAN_CUTOFF`], where `exp(-s^2)` is below 1e-27.
//!
//! The radial moments are `m_j = ∫ s^(j-1) K(s) ds` and the moment ratios are
//! `B_p = m_(d+p) / m_d`. They fix the step/bandwidth relations
//! `h1 = a1 B_2^(-1/2)`, `h2 = a2 B_4^(-1/4)` and the leading relative bias of
//! the gradient and curvature estimators for non-differentiable fields.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

pub const GAUSSIAN_CUTOFF: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Triangular,
    Quadratic,
    Tricube,
    Gaussian,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::Triangular,
        KernelFamily::Quadratic,
        KernelFamily::Tricube,
        KernelFamily::Gaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Triangular => "triangular",
            KernelFamily::Quadratic => "quadratic",
            KernelFamily::Tricube => "tricube",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "triangular" => Ok(KernelFamily::Triangular),
            "quadratic" => Ok(KernelFamily::Quadratic),
            "tricube" => Ok(KernelFamily::Tricube),
            "gaussian" => Ok(KernelFamily::Gaussian),
            other => Err(Error::InvalidArgument(format!(
                "unknown kernel family '{other}' (expected triangular | quadratic | tricube | gaussian)"
            ))),
        }
    }
}

/// A radial kernel with its support radius in normalized units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub support_radius: f64,
}

impl From<KernelFamily> for KernelSpec {
    fn from(family: KernelFamily) -> Self {
        KernelSpec::new(family)
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<KernelFamily>().map(KernelSpec::new)
    }
}

fn check_dimension(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok(())
}

impl KernelSpec {
    pub fn new(family: KernelFamily) -> Self {
        let support_radius = match family {
            KernelFamily::Gaussian => GAUSSIAN_CUTOFF,
            _ => 1.0,
        };
        KernelSpec { family, support_radius }
    }

    /// Unchecked evaluation for `s >= 0`; used in the pair-sum hot loops.
    #[inline]
    pub(crate) fn weight(&self, s: f64) -> f64 {
        if s >= self.support_radius {
            return 0.0;
        }
        match self.family {
            KernelFamily::Triangular => 1.0 - s,
            KernelFamily::Quadratic => 1.0 - s * s,
            KernelFamily::Tricube => {
                let t = 1.0 - s * s * s;
                t * t * t
            }
            KernelFamily::Gaussian => (-s * s).exp(),
        }
    }

    pub fn eval(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel argument must be nonnegative, got {s}"
            )));
        }
        Ok(self.weight(s))
    }

    /// Radial moment `m_j = ∫_0^R s^(j-1) K(s) ds` in closed form.
    pub fn moment(&self, j: u32) -> Result<f64> {
        if j < 1 {
            return Err(Error::InvalidArgument("moment order must be >= 1".into()));
        }
        let jf = f64::from(j);
        Ok(match self.family {
            KernelFamily::Triangular => 1.0 / (jf * (jf + 1.0)),
            KernelFamily::Quadratic => 2.0 / (jf * (jf + 2.0)),
            KernelFamily::Tricube => {
                // (1/3) B(j/3, 4)
                let x = jf / 3.0;
                2.0 / (x * (x + 1.0) * (x + 2.0) * (x + 3.0))
            }
            KernelFamily::Gaussian => 0.5 * statrs::function::gamma::gamma(0.5 * jf),
        })
    }

    /// Moment of the squared kernel, `∫_0^R s^(j-1) K(s)^2 ds`.
    pub fn moment_squared(&self, j: u32) -> Result<f64> {
        if j < 1 {
            return Err(Error::InvalidArgument("moment order must be >= 1".into()));
        }
        let jf = f64::from(j);
        Ok(match self.family {
            KernelFamily::Triangular => 2.0 / (jf * (jf + 1.0) * (jf + 2.0)),
            KernelFamily::Quadratic => {
                let x = 0.5 * jf;
                1.0 / (x * (x + 1.0) * (x + 2.0))
            }
            KernelFamily::Tricube => {
                let x = jf / 3.0;
                let prod: f64 = (0..7).map(|k| x + f64::from(k)).product();
                240.0 / prod
            }
            KernelFamily::Gaussian => statrs::function::gamma::gamma(0.5 * jf) / (2.0 * 2f64.powf(0.5 * jf)),
        })
    }

    /// Same moment by adaptive quadrature of the kernel definition.
    pub fn moment_by_quadrature(&self, j: u32, squared: bool) -> Result<f64> {
        if j < 1 {
            return Err(Error::InvalidArgument("moment order must be >= 1".into()));
        }
        let f = |s: f64| {
            let k = self.weight(s);
            s.powi(j as i32 - 1) * if squared { k * k } else { k }
        };
        Ok(quadrature::integrate(f, 0.0, self.support_radius, &[], 1e-13, 0.0, 500)?.value)
    }

    /// Kernel moment ratio `B_p = m_(d+p) / m_d`.
    pub fn moment_ratio(&self, p: u32, d: usize) -> Result<f64> {
        check_dimension(d)?;
        if p < 1 {
            return Err(Error::InvalidArgument("moment ratio order must be >= 1".into()));
        }
        let d = d as u32;
        Ok(self.moment(d + p)? / self.moment(d)?)
    }
}

/// Kernel moments and moment ratios for one (family, dimension) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentTable {
    pub dimension: usize,
    pub m: BTreeMap<u32, f64>,
    pub m2: BTreeMap<u32, f64>,
    pub b: BTreeMap<u32, f64>,
}

impl MomentTable {
    pub const MAX_RATIO_ORDER: u32 = 6;

    pub fn new(spec: &KernelSpec, d: usize) -> Result<Self> {
        check_dimension(d)?;
        let top = d as u32 + Self::MAX_RATIO_ORDER;
        let mut m = BTreeMap::new();
        let mut m2 = BTreeMap::new();
        for j in 1..=top {
            m.insert(j, spec.moment(j)?);
            m2.insert(j, spec.moment_squared(j)?);
        }
        let b = (1..=Self::MAX_RATIO_ORDER)
            .map(|p| Ok((p, spec.moment_ratio(p, d)?)))
            .collect::<Result<_>>()?;
        Ok(MomentTable { dimension: d, m, m2, b })
    }

    pub fn ratio(&self, p: u32) -> f64 {
        self.b[&p]
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "distance step must be positive, got {step}"
        )));
    }
    Ok(())
}

/// Gradient bandwidth from the consistency principle: `h1 = a1 B_2^(-1/2)`.
pub fn bandwidth_for_gradient(step: f64, spec: &KernelSpec, d: usize) -> Result<f64> {
    check_step(step)?;
    Ok(step / spec.moment_ratio(2, d)?.sqrt())
}

/// Curvature bandwidth from the consistency principle: `h2 = a2 B_4^(-1/4)`.
pub fn bandwidth_for_curvature(step: f64, spec: &KernelSpec, d: usize) -> Result<f64> {
    check_step(step)?;
    Ok(step / spec.moment_ratio(4, d)?.powf(0.25))
}

/// Leading relative bias of the gradient estimator for a non-differentiable
/// field, `(B_1 - B_2^(1/2)) / B_2^(1/2)`. Never positive.
pub fn relative_bias_gradient(spec: &KernelSpec, d: usize) -> Result<f64> {
    let b1 = spec.moment_ratio(1, d)?;
    let root = spec.moment_ratio(2, d)?.sqrt();
    Ok((b1 - root) / root)
}

/// Leading relative bias of the curvature estimator, `(B_1 - B_4^(1/4)) / B_4^(1/4)`.
pub fn relative_bias_curvature(spec: &KernelSpec, d: usize) -> Result<f64> {
    let b1 = spec.moment_ratio(1, d)?;
    let root = spec.moment_ratio(4, d)?.powf(0.25);
    Ok((b1 - root) / root)
}

/// One row of the kernel bias table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasTableRow {
    pub kernel: KernelFamily,
    pub dimension: usize,
    pub b12: f64,
    pub b2: f64,
    pub psi1: f64,
    pub b14: f64,
    pub b4: f64,
    pub psi2: f64,
    /// Set when the published table lists different values for this kernel.
    pub discrepancy: Option<String>,
}

pub fn bias_table_row(family: KernelFamily, d: usize) -> Result<BiasTableRow> {
    let spec = KernelSpec::new(family);
    let b1 = spec.moment_ratio(1, d)?;
    let b2 = spec.moment_ratio(2, d)?;
    let b4 = spec.moment_ratio(4, d)?;
    let discrepancy = (family == KernelFamily::Triangular && d == 2)
        .then(|| "published B2 = 1/5, B4 = 1/14; analytic moments give 3/10, 1/7".to_string());
    Ok(BiasTableRow {
        kernel: family,
        dimension: d,
        b12: b1 - b2.sqrt(),
        b2,
        psi1: relative_bias_gradient(&spec, d)?,
        b14: b1 - b4.powf(0.25),
        b4,
        psi2: relative_bias_curvature(&spec, d)?,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(f: KernelFamily) -> KernelSpec {
        KernelSpec::new(f)
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(spec(KernelFamily::Triangular).eval(0.0).unwrap(), 1.0);
        assert_eq!(spec(KernelFamily::Triangular).eval(1.5).unwrap(), 0.0);
        assert_relative_eq!(spec(KernelFamily::Quadratic).eval(0.5).unwrap(), 0.75);
        assert!(spec(KernelFamily::Tricube).eval(-0.1).is_err());
        assert_eq!(spec(KernelFamily::Gaussian).eval(GAUSSIAN_CUTOFF).unwrap(), 0.0);
    }

    #[test]
    fn moment_examples() {
        assert_relative_eq!(spec(KernelFamily::Quadratic).moment(2).unwrap(), 0.25);
        assert_relative_eq!(spec(KernelFamily::Gaussian).moment(2).unwrap(), 0.5);
        assert_relative_eq!(spec(KernelFamily::Triangular).moment(1).unwrap(), 0.5);
        assert!(spec(KernelFamily::Quadratic).moment(0).is_err());
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for family in KernelFamily::ALL {
            let k = spec(family);
            for j in 1..=12 {
                for squared in [false, true] {
                    let exact = if squared { k.moment_squared(j) } else { k.moment(j) }.unwrap();
                    let quad = k.moment_by_quadrature(j, squared).unwrap();
                    assert_relative_eq!(exact, quad, max_relative = 1e-9);
                }
            }
        }
    }

    #[test]
    fn ratio_examples() {
        assert_relative_eq!(
            spec(KernelFamily::Quadratic).moment_ratio(2, 2).unwrap(),
            1.0 / 3.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            spec(KernelFamily::Gaussian).moment_ratio(2, 2).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            spec(KernelFamily::Tricube).moment_ratio(4, 2).unwrap(),
            22.0 / 243.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            spec(KernelFamily::Tricube).moment_ratio(2, 2).unwrap(),
            22.0 / 91.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            spec(KernelFamily::Triangular).moment_ratio(2, 2).unwrap(),
            0.3,
            max_relative = 1e-14
        );
    }

    #[test]
    fn bandwidth_examples() {
        let g = spec(KernelFamily::Gaussian);
        let q = spec(KernelFamily::Quadratic);
        assert_relative_eq!(bandwidth_for_gradient(1.0, &g, 2).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(
            bandwidth_for_gradient(1.0, &q, 2).unwrap(),
            3f64.sqrt(),
            max_relative = 1e-14
        );
        assert_relative_eq!(bandwidth_for_gradient(2.0, &g, 2).unwrap(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(
            bandwidth_for_curvature(1.0, &g, 2).unwrap(),
            2f64.powf(-0.25),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bandwidth_for_curvature(1.0, &q, 2).unwrap(),
            6f64.powf(0.25),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            bandwidth_for_curvature(3.0, &g, 2).unwrap(),
            3.0 * 2f64.powf(-0.25),
            max_relative = 1e-14
        );
        assert!(bandwidth_for_gradient(0.0, &g, 2).is_err());
        assert!(bandwidth_for_curvature(-1.0, &g, 2).is_err());
    }

    #[test]
    fn published_bias_constants() {
        let cases = [
            (KernelFamily::Gaussian, -0.1138, -0.2548),
            (KernelFamily::Quadratic, -0.0762, -0.1653),
            (KernelFamily::Tricube, -0.0793, -0.1748),
        ];
        for (family, psi1, psi2) in cases {
            let k = spec(family);
            assert!(
                (relative_bias_gradient(&k, 2).unwrap() - psi1).abs() <= 5e-5,
                "{family}"
            );
            assert!(
                (relative_bias_curvature(&k, 2).unwrap() - psi2).abs() <= 5e-5,
                "{family}"
            );
        }
    }

    #[test]
    fn triangular_row_flags_discrepancy() {
        let row = bias_table_row(KernelFamily::Triangular, 2).unwrap();
        assert!(row.discrepancy.is_some());
        assert_relative_eq!(row.b2, 0.3, max_relative = 1e-14);
        assert_relative_eq!(row.b4, 1.0 / 7.0, max_relative = 1e-14);
        assert!(bias_table_row(KernelFamily::Quadratic, 2)
            .unwrap()
            .discrepancy
            .is_none());
    }

    #[test]
    fn family_names_round_trip() {
        for family in KernelFamily::ALL {
            assert_eq!(family.name().parse::<KernelFamily>().unwrap(), family);
        }
        assert!("epanechnikov".parse::<KernelFamily>().is_err());
    }

    #[test]
    fn moment_table_contents() {
        let t = MomentTable::new(&spec(KernelFamily::Quadratic), 2).unwrap();
        assert_eq!(t.m.len(), 8);
        assert_relative_eq!(t.ratio(4), 1.0 / 6.0, max_relative = 1e-14);
        assert!(t.m.values().all(|&v| v > 0.0));
    }

    proptest! {
        #[test]
        fn moment_inequalities(fi in 0usize..4, d in 1usize..=3) {
            let k = spec(KernelFamily::ALL[fi]);
            let b1 = k.moment_ratio(1, d).unwrap();
            let b2 = k.moment_ratio(2, d).unwrap();
            let b4 = k.moment_ratio(4, d).unwrap();
            prop_assert!(b2 - b1 * b1 >= 0.0);
            prop_assert!(b4 - b1.powi(4) >= 0.0);
            prop_assert!(b4 - b2 * b2 >= 0.0);
            prop_assert!(relative_bias_gradient(&k, d).unwrap() <= 0.0);
            prop_assert!(relative_bias_curvature(&k, d).unwrap() <= 0.0);
        }

        #[test]
        fn bandwidths_are_homogeneous(step in 1e-3f64..1e3, lambda in 1e-2f64..1e2, fi in 0usize..4) {
            let k = spec(KernelFamily::ALL[fi]);
            let h1 = bandwidth_for_gradient(step, &k, 2).unwrap();
            let h1s = bandwidth_for_gradient(lambda * step, &k, 2).unwrap();
            prop_assert!((h1s - lambda * h1).abs() <= 1e-12 * h1s);
            let h2 = bandwidth_for_curvature(step, &k, 2).unwrap();
            let h2s = bandwidth_for_curvature(lambda * step, &k, 2).unwrap();
            prop_assert!((h2s - lambda * h2).abs() <= 1e-12 * h2s);
        }
    }
}
