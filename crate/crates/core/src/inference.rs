//! Parameter inference: distance metric Φ, starting point, Nelder–Mead
//! simplex search and the fit pipeline.
//!
//! The sample estimators measure half the squared increment, so `φ̄1` and
//! `φ̄2` are compared with half the model values `φ1 = c1 F`, `φ2`. The
//! factor cancels in `z3` and only enters `z2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{estimate_all, ConstraintEstimates, ConstraintOptions};
use crate::error::{Error, Result};
use crate::fmt::round_sig;
use crate::kernels::KernelSpec;
use crate::sample::SampleData;
use crate::spectral::{
    curvature_stoch, eta0_from_variance, gradient_stoch, min_pi_on_band, normalization_integral, QuadratureConfig,
    SsrfParams,
};

const PENALTY: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub beta: f64,
    pub max_iterations: usize,
    /// Stop when the spread of Φ over the simplex falls below this.
    pub simplex_tolerance: f64,
    pub eta1_lower_bound: f64,
    /// Upper limit of `kc ξ`; larger cutoffs only add a negligible spectral
    /// tail but make every objective evaluation expensive.
    pub max_kc_xi: f64,
    /// Additional runs from jittered starting points.
    pub restarts: usize,
    /// Keep `kc` at its initial value `2π / a1`.
    pub freeze_kc: bool,
    /// Seed of the restart jitter.
    pub seed: u64,
    pub constraints: ConstraintOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            beta: 1.0,
            max_iterations: 2000,
            simplex_tolerance: 1e-10,
            eta1_lower_bound: -2.0 + 1e-6,
            max_kc_xi: 1e3,
            restarts: 2,
            freeze_kc: false,
            seed: 0,
            constraints: ConstraintOptions::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.max_iterations < 100 {
            return Err(Error::InvalidArgument(format!(
                "max_iterations must be at least 100, got {}",
                self.max_iterations
            )));
        }
        if !(self.max_kc_xi > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max_kc_xi must exceed 1, got {}",
                self.max_kc_xi
            )));
        }
        if !(self.simplex_tolerance > 0.0) {
            return Err(Error::InvalidArgument("simplex tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Shape parameters `θ' = (η1, ξ, kc)`; `η0` never enters Φ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub eta1: f64,
    pub xi: f64,
    pub kc: f64,
}

/// Ratio diagnostics `z1 = S0'`, `z2`, `z3` at a shape vector.
pub fn z_values(shape: &Shape, c: &ConstraintEstimates, q: &QuadratureConfig) -> Result<[f64; 3]> {
    let d = c.dimension;
    let params = SsrfParams::new(1.0, shape.eta1, shape.xi, shape.kc)?;
    let z1 = normalization_integral(shape.eta1, params.kc_xi(), d, q)?;
    let es0 = eta0_from_variance(1.0, d).map(|e| z1 / e)?;
    let (_, es1) = gradient_stoch(&params, c.a1, d, q)?;
    let (_, es2) = curvature_stoch(&params, c.a2, d, q)?;
    let z2 = (c.s0_bar / c.s1_bar) * (0.5 * es1 / es0);
    let z3 = (c.s1_bar / c.s2_bar) * (es2 / es1);
    Ok([z1, z2, z3])
}

fn root(z: f64, beta: f64) -> f64 {
    if beta == 1.0 {
        z
    } else {
        z.signum() * z.abs().powf(1.0 / beta)
    }
}

/// `Φ = Σ (1 - z_i^(1/β))²`
pub fn phi_from_z(z: &[f64; 3], beta: f64) -> f64 {
    z.iter().map(|&zi| (1.0 - root(zi, beta)).powi(2)).sum()
}

/// Distance between sample and model constraints. Impermissible or
/// non-evaluable shapes return a large finite penalty instead of an error.
pub fn objective_phi(
    shape: &Shape,
    c: &ConstraintEstimates,
    beta: f64,
    eta1_lower_bound: f64,
    q: &QuadratureConfig,
) -> f64 {
    if !(shape.xi > 0.0 && shape.kc > 0.0 && shape.xi.is_finite() && shape.kc.is_finite()) {
        return 2.0 * PENALTY;
    }
    if shape.eta1 < eta1_lower_bound {
        let min_pi = min_pi_on_band(shape.eta1, shape.kc * shape.xi);
        let violation = (eta1_lower_bound - shape.eta1).max((-min_pi).max(0.0));
        return PENALTY * (1.0 + violation);
    }
    match z_values(shape, c, q) {
        Ok(z) => {
            let phi = phi_from_z(&z, beta);
            if phi.is_finite() {
                phi
            } else {
                2.0 * PENALTY
            }
        }
        Err(Error::Impermissible { min_pi }) => PENALTY * (1.0 + min_pi.abs()),
        Err(e) => {
            log::debug!("objective not evaluable at {shape:?}: {e}");
            2.0 * PENALTY
        }
    }
}

/// Starting point `(1, √(S̄1/S̄2), 2π/a1)`. Falls back to `ξ = a1` with a
/// warning when `S̄2 ≤ 0`.
pub fn initial_guess(c: &ConstraintEstimates) -> (Shape, Option<String>) {
    let kc = 2.0 * std::f64::consts::PI / c.a1;
    if c.s2_bar > 0.0 && c.s1_bar > 0.0 {
        (
            Shape {
                eta1: 1.0,
                xi: (c.s1_bar / c.s2_bar).sqrt(),
                kc,
            },
            None,
        )
    } else {
        (
            Shape {
                eta1: 1.0,
                xi: c.a1,
                kc,
            },
            Some(format!(
                "nonpositive curvature constraint (S2 = {}); initial xi set to a1",
                c.s2_bar
            )),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NelderMeadConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Rebuilds of the simplex around the best vertex after convergence.
    pub restarts: usize,
    /// Initial simplex edge per coordinate; relative 5% steps when empty.
    pub initial_step: Vec<f64>,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_iterations: 2000,
            tolerance: 1e-10,
            restarts: 0,
            initial_step: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best vertex value after each iteration.
    pub trace: Vec<f64>,
}

fn build_simplex<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], steps: &[f64]) -> Vec<(Vec<f64>, f64)> {
    let mut simplex = vec![(x0.to_vec(), f(x0))];
    for i in 0..x0.len() {
        let mut x = x0.to_vec();
        x[i] += if let Some(&s) = steps.get(i) {
            s
        } else if x0[i] != 0.0 {
            0.05 * x0[i]
        } else {
            0.00025
        };
        let fx = f(&x);
        simplex.push((x, fx));
    }
    simplex
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t (b - a)
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// Derivative-free minimization with reflection 1, expansion 2, contraction
/// 0.5 and shrink 0.5.
pub fn nelder_mead<F>(f: F, x0: &[f64], config: &NelderMeadConfig) -> Result<NelderMeadResult>
where
    F: Fn(&[f64]) -> f64,
{
    if x0.is_empty() {
        return Err(Error::InvalidArgument("empty starting point".into()));
    }
    if !f(x0).is_finite() {
        return Err(Error::InvalidArgument(
            "objective is not finite at the starting point".into(),
        ));
    }
    let n = x0.len();
    let mut simplex = build_simplex(&f, x0, &config.initial_step);
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut restarts_left = config.restarts;
    let mut converged = false;
    while iterations < config.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread < config.tolerance {
            if restarts_left == 0 {
                converged = true;
                break;
            }
            restarts_left -= 1;
            let best = simplex[0].0.clone();
            simplex = build_simplex(&f, &best, &config.initial_step);
            continue;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let xr = affine(&centroid, &worst.0, -1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = affine(&centroid, &worst.0, -2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = affine(&centroid, &xr, 0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = affine(&centroid, &worst.0, 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < fr.min(worst.1) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x = affine(&best, &v.0, 0.5);
                    let fx = f(&x);
                    *v = (x, fx);
                }
            }
        }
        let best = simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        trace.push(best);
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(NelderMeadResult {
        x: simplex[0].0.clone(),
        value: simplex[0].1,
        iterations,
        converged,
        trace,
    })
}

/// One local solution found by a (re)start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSolution {
    pub start: Shape,
    pub shape: Shape,
    pub phi: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: SsrfParams,
    pub phi: f64,
    pub iterations: usize,
    pub converged: bool,
    pub constraints: ConstraintEstimates,
    pub z: [f64; 3],
    pub warnings: Vec<String>,
    pub local_solutions: Vec<LocalSolution>,
}

/// JSON layout of a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub eta0: f64,
    pub eta1: f64,
    pub xi: f64,
    pub kc: f64,
    pub phi: f64,
    pub iterations: usize,
    pub converged: bool,
    pub z: [f64; 3],
    pub a1: f64,
    pub h1: f64,
    pub h2: f64,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn report(&self) -> FitReport {
        FitReport {
            eta0: round_sig(self.params.eta0),
            eta1: round_sig(self.params.eta1),
            xi: round_sig(self.params.xi),
            kc: round_sig(self.params.kc),
            phi: round_sig(self.phi),
            iterations: self.iterations,
            converged: self.converged,
            z: self.z.map(round_sig),
            a1: round_sig(self.constraints.a1),
            h1: round_sig(self.constraints.h1),
            h2: round_sig(self.constraints.h2),
            warnings: self.warnings.clone(),
        }
    }
}

fn encode(shape: &Shape, freeze_kc: bool) -> Vec<f64> {
    let mut x = vec![shape.eta1, shape.xi.ln()];
    if !freeze_kc {
        x.push(shape.kc.ln());
    }
    x
}

fn decode(x: &[f64], frozen_kc: f64) -> Shape {
    Shape {
        eta1: x[0],
        xi: x[1].exp(),
        kc: x.get(2).map_or(frozen_kc, |v| v.exp()),
    }
}

fn starting_points(base: &Shape, config: &FitConfig) -> Vec<Shape> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eta1_choices = [-1.0, 1.0, 2.0];
    let mut starts = vec![*base];
    for r in 0..config.restarts {
        let jitter_xi = 1.0 + rng.random_range(-0.5..0.5);
        let jitter_kc = 1.0 + rng.random_range(-0.5..0.5);
        starts.push(Shape {
            eta1: eta1_choices[r % eta1_choices.len()],
            xi: base.xi * jitter_xi,
            kc: if config.freeze_kc { base.kc } else { base.kc * jitter_kc },
        });
    }
    starts
}

/// Minimizes Φ from the given constraints. `η0` is recovered from `S̄0`.
pub fn fit_constraints(c: &ConstraintEstimates, config: &FitConfig, q: &QuadratureConfig) -> Result<FitResult> {
    config.validate()?;
    q.validate()?;
    if !(c.s0_bar > 0.0) {
        return Err(Error::DegenerateData(format!(
            "sample variance is {}; nothing to fit",
            c.s0_bar
        )));
    }
    if !(c.phi1_bar > 0.0) {
        return Err(Error::DegenerateData(format!(
            "gradient constraint is {}; nothing to fit",
            c.phi1_bar
        )));
    }
    let (base, warning) = initial_guess(c);
    let mut warnings: Vec<String> = warning.into_iter().collect();
    let objective = |x: &[f64]| {
        let shape = decode(x, base.kc);
        let excess = shape.kc * shape.xi / config.max_kc_xi;
        if excess > 1.0 {
            return PENALTY * (1.0 + excess.ln());
        }
        objective_phi(&shape, c, config.beta, config.eta1_lower_bound, q)
    };
    let nm = NelderMeadConfig {
        max_iterations: config.max_iterations,
        tolerance: config.simplex_tolerance,
        restarts: 1,
        initial_step: vec![0.5, 0.25, 0.25],
    };
    let mut local = Vec::new();
    for start in starting_points(&base, config) {
        let res = nelder_mead(objective, &encode(&start, config.freeze_kc), &nm)?;
        local.push(LocalSolution {
            start,
            shape: decode(&res.x, base.kc),
            phi: res.value,
            iterations: res.iterations,
            converged: res.converged,
        });
    }
    let best = *local
        .iter()
        .min_by(|a, b| a.phi.total_cmp(&b.phi))
        .expect("at least one start");
    if best.phi >= PENALTY {
        return Err(Error::NonFiniteObjective);
    }
    if !best.converged {
        warnings.push(format!(
            "simplex did not converge within {} iterations",
            config.max_iterations
        ));
    }
    if best.shape.eta1 < 0.0 {
        warnings.push(format!("negative eta1 = {:.4}", best.shape.eta1));
    }
    let distinct = local
        .iter()
        .filter(|s| (s.shape.xi / best.shape.xi - 1.0).abs() > 1e-3 && s.phi < PENALTY)
        .count();
    if distinct > 0 {
        warnings.push(format!("{distinct} restart(s) ended at a different local solution"));
    }
    let eta0 = eta0_from_variance(c.s0_bar, c.dimension)?;
    let params = SsrfParams::new(eta0, best.shape.eta1, best.shape.xi, best.shape.kc)?;
    let z = z_values(&best.shape, c, q)?;
    Ok(FitResult {
        params,
        phi: best.phi,
        iterations: local.iter().map(|s| s.iterations).sum(),
        converged: best.converged,
        constraints: c.clone(),
        z,
        warnings,
        local_solutions: local,
    })
}

/// Full pipeline: sample constraints, starting point, simplex search, `η0`.
pub fn fit_ssrf(data: &SampleData, spec: &KernelSpec, config: &FitConfig, q: &QuadratureConfig) -> Result<FitResult> {
    config.validate()?;
    let c = estimate_all(data, spec, &config.constraints)?;
    fit_constraints(&c, config, q)
}
