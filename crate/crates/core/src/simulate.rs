//! Gaussian random fields on scattered locations by Cholesky factorization.
//!
//! Random streams are ChaCha8 (`rand_chacha`), seeded with `seed ^ m` for
//! replicate `m`; standard normals come from the ziggurat sampler of
//! `rand_distr`. Both are platform independent, so a `(seed, plan)` pair
//! reproduces the same values everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_indexed, Execution};
use crate::sample::{distance, SampleData};
use crate::spectral::{covariance, variance_constraint, QuadratureConfig, SsrfParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CovarianceModel {
    Spherical { sigma2: f64, range: f64 },
    Exponential { sigma2: f64, range: f64 },
    Gaussian { sigma2: f64, range: f64 },
    Ssrf { params: SsrfParams, dimension: usize },
}

impl CovarianceModel {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceModel::Spherical { .. } => "spherical",
            CovarianceModel::Exponential { .. } => "exponential",
            CovarianceModel::Gaussian { .. } => "gaussian",
            CovarianceModel::Ssrf { .. } => "ssrf",
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            CovarianceModel::Spherical { sigma2, range }
            | CovarianceModel::Exponential { sigma2, range }
            | CovarianceModel::Gaussian { sigma2, range } => {
                if !(sigma2 > 0.0 && sigma2.is_finite() && range > 0.0 && range.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "{} model needs positive sigma2 and range, got ({sigma2}, {range})",
                        self.name()
                    )));
                }
                if matches!(self, CovarianceModel::Spherical { .. }) && d > 3 {
                    return Err(Error::InvalidArgument(format!(
                        "spherical covariance is not valid in {d} dimensions"
                    )));
                }
                Ok(())
            }
            CovarianceModel::Ssrf { params, dimension } => {
                if dimension != d {
                    return Err(Error::InvalidArgument(format!(
                        "SSRF model built for d = {dimension}, used in d = {d}"
                    )));
                }
                params.validate()
            }
        }
    }

    /// Value at the origin.
    pub fn variance(&self, q: &QuadratureConfig) -> Result<f64> {
        match *self {
            CovarianceModel::Spherical { sigma2, .. }
            | CovarianceModel::Exponential { sigma2, .. }
            | CovarianceModel::Gaussian { sigma2, .. } => Ok(sigma2),
            CovarianceModel::Ssrf { params, dimension } => variance_constraint(&params, dimension, q),
        }
    }
}

/// Covariance at lag `r`.
pub fn model_covariance(model: &CovarianceModel, r: f64, q: &QuadratureConfig) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!("lag must be nonnegative, got {r}")));
    }
    Ok(match *model {
        CovarianceModel::Spherical { sigma2, range } => {
            if r <= range {
                let t = r / range;
                sigma2 * (1.0 - 1.5 * t + 0.5 * t * t * t)
            } else {
                0.0
            }
        }
        CovarianceModel::Exponential { sigma2, range } => sigma2 * (-r / range).exp(),
        CovarianceModel::Gaussian { sigma2, range } => sigma2 * (-(r * r) / (range * range)).exp(),
        CovarianceModel::Ssrf { params, dimension } => covariance(&params, r, dimension, q)?,
    })
}

/// Cheap covariance evaluator. Closed-form models are evaluated directly;
/// SSRF covariances are tabulated once and interpolated with cubic Hermite
/// segments.
#[derive(Clone, Debug)]
pub enum CovarianceFn {
    Analytic(CovarianceModel),
    Table {
        step: f64,
        values: Vec<f64>,
        slopes: Vec<f64>,
    },
}

impl CovarianceFn {
    /// Default number of table intervals for SSRF models.
    pub const TABLE_INTERVALS: usize = 1024;

    pub fn new(model: &CovarianceModel, max_lag: f64, q: &QuadratureConfig, exec: Execution) -> Result<Self> {
        match model {
            CovarianceModel::Ssrf { .. } => Self::tabulate(model, max_lag, Self::TABLE_INTERVALS, q, exec),
            _ => Ok(CovarianceFn::Analytic(*model)),
        }
    }

    pub fn tabulate(
        model: &CovarianceModel,
        max_lag: f64,
        intervals: usize,
        q: &QuadratureConfig,
        exec: Execution,
    ) -> Result<Self> {
        if !(max_lag > 0.0 && max_lag.is_finite()) || intervals < 2 {
            return Err(Error::InvalidArgument(format!(
                "table needs a positive range and >= 2 intervals, got ({max_lag}, {intervals})"
            )));
        }
        let step = max_lag / intervals as f64;
        let values: Result<Vec<f64>> =
            map_indexed(exec, intervals + 1, |k| model_covariance(model, k as f64 * step, q))
                .into_iter()
                .collect();
        let values = values?;
        let n = values.len();
        let slopes = (0..n)
            .map(|k| {
                if k == 0 {
                    // even function: zero slope at the origin
                    0.0
                } else if k == n - 1 {
                    (values[k] - values[k - 1]) / step
                } else {
                    (values[k + 1] - values[k - 1]) / (2.0 * step)
                }
            })
            .collect();
        Ok(CovarianceFn::Table { step, values, slopes })
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            CovarianceFn::Analytic(m) => model_covariance(m, r, &QuadratureConfig::default()).unwrap_or(f64::NAN),
            CovarianceFn::Table { step, values, slopes } => {
                let x = r / step;
                let last = values.len() - 1;
                if x >= last as f64 {
                    return values[last];
                }
                let k = x.floor() as usize;
                let t = x - k as f64;
                let (t2, t3) = (t * t, t * t * t);
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + t;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                h00 * values[k] + h10 * step * slopes[k] + h01 * values[k + 1] + h11 * step * slopes[k + 1]
            }
        }
    }

    pub fn at_origin(&self) -> f64 {
        self.eval(0.0)
    }
}

/// Dense row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("matrix rows must form a square".into()));
        }
        Ok(Matrix { n, data: rows.concat() })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `A Aᵀ`
    pub fn mul_transpose(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        Matrix {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// `C[i][j] = cov(|s_i - s_j|)` for row-major coordinates.
pub fn covariance_matrix(coords: &[f64], dim: usize, cov: &CovarianceFn) -> Result<Matrix> {
    if dim == 0 || !coords.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument("coordinates do not match the dimension".into()));
    }
    let n = coords.len() / dim;
    let c0 = cov.at_origin();
    let mut m = Matrix::zeros(n);
    for i in 0..n {
        m[(i, i)] = c0;
        for j in 0..i {
            let r = distance(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]);
            let v = cov.eval(r);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Lower-triangular `L` with `L Lᵀ = C`.
pub fn cholesky(c: &Matrix) -> Result<Matrix> {
    let n = c.size();
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut diag = c[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = c[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Cholesky factor of a covariance matrix, retrying once with a diagonal
/// jitter of `1e-10 σ²`.
pub fn factor_covariance(c: &Matrix, sigma2: f64) -> Result<Matrix> {
    match cholesky(c) {
        Ok(l) => Ok(l),
        Err(Error::NotPositiveDefinite { pivot, value }) => {
            log::warn!("covariance matrix not positive definite at pivot {pivot} ({value}); adding jitter");
            let mut jittered = c.clone();
            for i in 0..c.size() {
                jittered[(i, i)] += 1e-10 * sigma2;
            }
            cholesky(&jittered)
        }
        Err(e) => Err(e),
    }
}

/// Stream for replicate `m` of an experiment seeded with `seed`.
pub fn replicate_rng(seed: u64, m: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ m)
}

/// `n` i.i.d. uniform points in the box `[lower, upper]`, row-major.
pub fn sample_locations<R: Rng + ?Sized>(n: usize, lower: &[f64], upper: &[f64], rng: &mut R) -> Vec<f64> {
    let mut coords = Vec::with_capacity(n * lower.len());
    for _ in 0..n {
        for (lo, hi) in lower.iter().zip(upper) {
            coords.push(lo + (hi - lo) * rng.random::<f64>());
        }
    }
    coords
}

/// `mean + L z` with `z` i.i.d. standard normal.
pub fn gaussian_field<R: Rng + ?Sized>(l: &Matrix, mean: f64, rng: &mut R) -> Vec<f64> {
    let n = l.size();
    let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    (0..n)
        .map(|i| mean + l.row(i)[..=i].iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub n: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub model: CovarianceModel,
    pub mean: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl SimulationPlan {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 points, got {}",
                self.n
            )));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::InvalidArgument(
                "domain bounds must have equal, nonzero length".into(),
            ));
        }
        if self.lower.iter().zip(&self.upper).any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::InvalidArgument("domain box must have positive volume".into()));
        }
        self.model.validate(self.dim())
    }

    pub fn diameter(&self) -> f64 {
        distance(&self.lower, &self.upper)
    }

    /// Replicate `m`: fresh locations and field values from stream `seed ^ m`.
    pub fn replicate(&self, m: u64, q: &QuadratureConfig) -> Result<SampleData> {
        let cov = CovarianceFn::new(&self.model, self.diameter(), q, Execution::Sequential)?;
        self.replicate_with(m, &cov)
    }

    pub fn replicate_with(&self, m: u64, cov: &CovarianceFn) -> Result<SampleData> {
        self.validate()?;
        let mut rng = replicate_rng(self.seed, m);
        let coords = sample_locations(self.n, &self.lower, &self.upper, &mut rng);
        let c = covariance_matrix(&coords, self.dim(), cov)?;
        let l = factor_covariance(&c, cov.at_origin())?;
        let values = gaussian_field(&l, self.mean, &mut rng);
        SampleData::new(self.dim(), coords, values)
    }

    /// All replicates, in order.
    pub fn run(&self, q: &QuadratureConfig, exec: Execution) -> Result<Vec<SampleData>> {
        self.validate()?;
        let cov = CovarianceFn::new(&self.model, self.diameter(), q, exec)?;
        map_indexed(exec, self.replicates, |m| self.replicate_with(m as u64, &cov))
            .into_iter()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn exp_model(range: f64) -> CovarianceModel {
        CovarianceModel::Exponential { sigma2: 1.0, range }
    }

    #[test]
    fn covariance_examples() {
        let sph = CovarianceModel::Spherical {
            sigma2: 2.0,
            range: 1.5,
        };
        assert_eq!(model_covariance(&sph, 1.5, &q()).unwrap(), 0.0);
        assert_eq!(model_covariance(&sph, 3.0, &q()).unwrap(), 0.0);
        let e = CovarianceModel::Exponential {
            sigma2: 3.0,
            range: 0.5,
        };
        assert_eq!(model_covariance(&e, 0.0, &q()).unwrap(), 3.0);
        let g = CovarianceModel::Gaussian {
            sigma2: 2.0,
            range: 1.0,
        };
        assert_relative_eq!(
            model_covariance(&g, 1.0, &q()).unwrap(),
            2.0 * (-1.0f64).exp(),
            max_relative = 1e-15
        );
        for m in [sph, e, g] {
            assert_eq!(model_covariance(&m, 0.0, &q()).unwrap(), m.variance(&q()).unwrap());
        }
    }

    #[test]
    fn spherical_restricted_to_three_dimensions() {
        let sph = CovarianceModel::Spherical {
            sigma2: 1.0,
            range: 1.0,
        };
        assert!(sph.validate(3).is_ok());
        assert!(sph.validate(4).is_err());
    }

    #[test]
    fn ssrf_table_matches_quadrature() {
        let params = SsrfParams::new(1.0, 1.0, 0.5, 10.0).unwrap();
        let model = CovarianceModel::Ssrf { params, dimension: 2 };
        let table = CovarianceFn::new(&model, 8.0, &q(), Execution::Parallel).unwrap();
        let g0 = table.at_origin();
        for r in [0.0, 0.013, 0.31, 1.234, 3.7] {
            let exact = model_covariance(&model, r, &q()).unwrap();
            assert!((table.eval(r) - exact).abs() < 1e-5 * g0, "r = {r}");
        }
    }

    #[test]
    fn matrix_examples() {
        let cov = CovarianceFn::Analytic(CovarianceModel::Spherical {
            sigma2: 2.0,
            range: 1.0,
        });
        let m = covariance_matrix(&[0.0, 0.0, 5.0, 5.0], 2, &cov).unwrap();
        assert_eq!((m[(0, 0)], m[(1, 1)], m[(0, 1)]), (2.0, 2.0, 0.0));

        let mut rng = replicate_rng(7, 0);
        let coords = sample_locations(5, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
        let c = covariance_matrix(&coords, 2, &CovarianceFn::Analytic(exp_model(0.5))).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(c[(i, j)], c[(j, i)]);
            }
        }
        // positive definite iff the factorization succeeds with positive pivots
        let l = cholesky(&c).unwrap();
        assert!((0..5).all(|i| l[(i, i)] > 0.0));
    }

    #[test]
    fn cholesky_examples() {
        let id = Matrix::identity(4);
        assert_eq!(cholesky(&id).unwrap(), id);
        let c = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&c).unwrap();
        assert_relative_eq!(l[(0, 0)], 2.0);
        assert_relative_eq!(l[(1, 0)], 1.0);
        assert_relative_eq!(l[(1, 1)], 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn cholesky_reconstruction() {
        let mut rng = replicate_rng(3, 1);
        let n = 20;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let a = Matrix::from_rows(&a).unwrap();
        let mut c = a.mul_transpose();
        for i in 0..n {
            c[(i, i)] += n as f64;
        }
        let l = cholesky(&c).unwrap();
        let rel = l.mul_transpose().sub(&c).frobenius() / c.frobenius();
        assert!(rel <= 1e-10, "{rel}");
    }

    #[test]
    fn cholesky_reports_pivot() {
        let c = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&c), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let c = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(cholesky(&c).is_err());
        assert!(factor_covariance(&c, 1.0).is_ok());
    }

    #[test]
    fn locations_examples() {
        let mut rng = replicate_rng(1, 0);
        let one = sample_locations(1, &[2.0, -1.0], &[3.0, 1.0], &mut rng);
        assert!(one[0] >= 2.0 && one[0] < 3.0 && one[1] >= -1.0 && one[1] < 1.0);
        let many = sample_locations(10_000, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
        for axis in 0..2 {
            let mean = many.iter().skip(axis).step_by(2).sum::<f64>() / 10_000.0;
            assert!((mean - 0.5).abs() < 0.01);
        }
        let a = sample_locations(5, &[0.0], &[1.0], &mut replicate_rng(9, 2));
        let b = sample_locations(5, &[0.0], &[1.0], &mut replicate_rng(9, 2));
        assert_eq!(a, b);
    }

    #[test]
    fn field_examples() {
        let plan = SimulationPlan {
            n: 30,
            lower: vec![0.0, 0.0],
            upper: vec![5.0, 5.0],
            model: CovarianceModel::Exponential {
                sigma2: 1e-12,
                range: 0.5,
            },
            mean: 4.0,
            replicates: 2,
            seed: 11,
        };
        let s = plan.replicate(0, &q()).unwrap();
        assert!(s.values().iter().all(|v| (v - 4.0).abs() < 1e-4));
        assert_eq!(plan.replicate(1, &q()).unwrap(), plan.replicate(1, &q()).unwrap());
        assert_ne!(plan.replicate(0, &q()).unwrap(), plan.replicate(1, &q()).unwrap());
        let seq = plan.run(&q(), Execution::Sequential).unwrap();
        let par = plan.run(&q(), Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }

    #[test]
    fn empirical_covariance_converges() {
        let mut rng = replicate_rng(5, 0);
        let coords = sample_locations(10, &[0.0, 0.0], &[1.0, 1.0], &mut rng);
        let c = covariance_matrix(&coords, 2, &CovarianceFn::Analytic(exp_model(0.5))).unwrap();
        let l = cholesky(&c).unwrap();
        let m = 500;
        let fields: Vec<Vec<f64>> = (0..m)
            .map(|k| gaussian_field(&l, 0.0, &mut replicate_rng(5, k + 1)))
            .collect();
        let mut emp = Matrix::zeros(10);
        for f in &fields {
            for i in 0..10 {
                for j in 0..10 {
                    emp[(i, j)] += f[i] * f[j] / m as f64;
                }
            }
        }
        let rel = emp.sub(&c).frobenius() / c.frobenius();
        assert!(rel < 0.15, "{rel}");
    }

    #[test]
    fn replicate_mean_within_standard_error() {
        let plan = SimulationPlan {
            n: 8,
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            model: exp_model(0.3),
            mean: 2.0,
            replicates: 400,
            seed: 4,
        };
        let mut rng = replicate_rng(4, 999);
        let coords = sample_locations(8, &plan.lower, &plan.upper, &mut rng);
        let l = cholesky(&covariance_matrix(&coords, 2, &CovarianceFn::Analytic(plan.model)).unwrap()).unwrap();
        let mut mean = vec![0.0; 8];
        for m in 0..plan.replicates {
            for (acc, v) in mean
                .iter_mut()
                .zip(gaussian_field(&l, plan.mean, &mut replicate_rng(plan.seed, m as u64)))
            {
                *acc += v / plan.replicates as f64;
            }
        }
        for v in mean {
            assert!((v - 2.0).abs() < 3.0 / (plan.replicates as f64).sqrt());
        }
    }
}
