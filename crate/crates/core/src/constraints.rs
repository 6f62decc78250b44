//! Sample constraints from scattered data.
//!
//! Every estimator here is built from off-diagonal kernel-weighted pair
//! averages `<A_ij>_h = Σ' K(s_ij/h) A_ij / Σ' K(s_ij/h)` over ordered pairs
//! `i != j`. The squared-increment average `f̄(h) = <(X_i - X_j)^2>_h / 2` is a
//! semivariogram estimate at lags of order `h`; the gradient and curvature
//! estimators combine it at the bandwidths `h1` and `h2, √2 h2, 2 h2`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{bandwidth_for_curvature, bandwidth_for_gradient, KernelSpec};
use crate::par::{map_indexed, Execution};
use crate::sample::{distance, SampleData};

/// `c_d^(1) = 2d`
pub fn c1(d: usize) -> f64 {
    2.0 * d as f64
}

/// `c_d^(2) = 8d^2`
pub fn c2(d: usize) -> f64 {
    8.0 * (d * d) as f64
}

/// `c_d^(3) = 4d(d-1)`
pub fn c3(d: usize) -> f64 {
    4.0 * (d * (d - 1)) as f64
}

/// How the pair sums are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairStrategy {
    /// Plain O(n^2) double loop.
    #[default]
    Direct,
    /// Uniform grid of cells of width `R * h_max`; only neighbouring cells are visited.
    Binned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintOptions {
    /// Minimum number of contributing (unordered) pairs per kernel average.
    pub min_pairs: usize,
    /// Nearest neighbours per point entering the step estimate.
    pub neighbors: usize,
    pub strategy: PairStrategy,
    pub execution: Execution,
    /// Solve `<s^2>_h1 = a1^2` and `<s^4>_h2 = a2^4` by fixed-point iteration
    /// instead of the explicit linear bandwidth rules.
    pub refine_bandwidths: bool,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        ConstraintOptions {
            min_pairs: 10,
            neighbors: 1,
            strategy: PairStrategy::Direct,
            execution: Execution::default(),
            refine_bandwidths: false,
        }
    }
}

/// Kernel-weighted pair sums at one bandwidth, accumulated over ordered pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairMoments {
    pub bandwidth: f64,
    /// Ordered pairs with nonzero weight.
    pub ordered_pairs: usize,
    pub weight: f64,
    pub s2: f64,
    pub s4: f64,
    pub dx2: f64,
}

impl PairMoments {
    fn add(&mut self, other: &PairMoments) {
        self.ordered_pairs += other.ordered_pairs;
        self.weight += other.weight;
        self.s2 += other.s2;
        self.s4 += other.s4;
        self.dx2 += other.dx2;
    }

    pub fn pairs(&self) -> usize {
        self.ordered_pairs / 2
    }

    /// `<s^2>_h`
    pub fn mean_s2(&self) -> f64 {
        self.s2 / self.weight
    }

    /// `<s^4>_h`
    pub fn mean_s4(&self) -> f64 {
        self.s4 / self.weight
    }

    /// `f̄(h) = <(X_i - X_j)^2>_h / 2`
    pub fn f_bar(&self) -> f64 {
        0.5 * self.dx2 / self.weight
    }

    fn require(&self, min_pairs: usize) -> Result<()> {
        if self.weight <= 0.0 || self.pairs() < min_pairs.max(1) {
            return Err(Error::InsufficientPairs {
                bandwidth: self.bandwidth,
                pairs: self.pairs(),
                required: min_pairs.max(1),
            });
        }
        Ok(())
    }
}

#[inline]
fn accumulate_pair(acc: &mut [PairMoments], spec: &KernelSpec, s: f64, dx2: f64) {
    let s2 = s * s;
    for m in acc.iter_mut() {
        let w = spec.weight(s / m.bandwidth);
        if w > 0.0 {
            m.ordered_pairs += 1;
            m.weight += w;
            m.s2 += w * s2;
            m.s4 += w * s2 * s2;
            m.dx2 += w * dx2;
        }
    }
}

fn empty_moments(bandwidths: &[f64]) -> Vec<PairMoments> {
    bandwidths
        .iter()
        .map(|&h| PairMoments {
            bandwidth: h,
            ..Default::default()
        })
        .collect()
}

fn reduce_rows(bandwidths: &[f64], rows: Vec<Vec<PairMoments>>) -> Vec<PairMoments> {
    let mut total = empty_moments(bandwidths);
    for row in &rows {
        for (t, r) in total.iter_mut().zip(row) {
            t.add(r);
        }
    }
    total
}

fn direct_rows(data: &SampleData, bandwidths: &[f64], spec: &KernelSpec, exec: Execution) -> Vec<Vec<PairMoments>> {
    let n = data.len();
    let values = data.values();
    map_indexed(exec, n, |i| {
        let mut acc = empty_moments(bandwidths);
        let xi = data.location(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = distance(xi, data.location(j));
            let dv = values[i] - values[j];
            accumulate_pair(&mut acc, spec, s, dv * dv);
        }
        acc
    })
}

fn cell_of(x: &[f64], origin: &[f64], width: f64) -> Vec<i64> {
    x.iter()
        .zip(origin)
        .map(|(v, o)| ((v - o) / width).floor() as i64)
        .collect()
}

fn neighbour_offsets(dim: usize) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::with_capacity(dim)];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                (-1..=1).map(move |o| {
                    let mut q = p.clone();
                    q.push(o);
                    q
                })
            })
            .collect();
    }
    out
}

fn binned_rows(data: &SampleData, bandwidths: &[f64], spec: &KernelSpec, exec: Execution) -> Vec<Vec<PairMoments>> {
    let dim = data.dim();
    let h_max = bandwidths.iter().copied().fold(0.0, f64::max);
    let width = spec.support_radius * h_max;
    let mut origin = vec![f64::INFINITY; dim];
    for loc in data.locations() {
        for (o, v) in origin.iter_mut().zip(loc) {
            *o = o.min(*v);
        }
    }
    let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, loc) in data.locations().enumerate() {
        cells.entry(cell_of(loc, &origin, width)).or_default().push(i);
    }
    let offsets = neighbour_offsets(dim);
    let values = data.values();
    map_indexed(exec, data.len(), |i| {
        let mut acc = empty_moments(bandwidths);
        let xi = data.location(i);
        let home = cell_of(xi, &origin, width);
        for off in &offsets {
            let key: Vec<i64> = home.iter().zip(off).map(|(c, o)| c + o).collect();
            let Some(members) = cells.get(&key) else { continue };
            for &j in members {
                if j == i {
                    continue;
                }
                let s = distance(xi, data.location(j));
                let dv = values[i] - values[j];
                accumulate_pair(&mut acc, spec, s, dv * dv);
            }
        }
        acc
    })
}

/// Pair sums at several bandwidths in one pass over the pairs.
///
/// Row partial sums are reduced in index order, so the result does not depend
/// on the execution mode. The binned strategy visits pairs in a different
/// order and agrees with the direct sum to rounding.
pub fn pair_moments(
    data: &SampleData,
    bandwidths: &[f64],
    spec: &KernelSpec,
    strategy: PairStrategy,
    exec: Execution,
) -> Result<Vec<PairMoments>> {
    if let Some(&bad) = bandwidths.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bad}")));
    }
    if bandwidths.is_empty() {
        return Ok(Vec::new());
    }
    let rows = match strategy {
        PairStrategy::Direct => direct_rows(data, bandwidths, spec, exec),
        PairStrategy::Binned => binned_rows(data, bandwidths, spec, exec),
    };
    Ok(reduce_rows(bandwidths, rows))
}

/// Normalized kernel average of a two-point function over ordered pairs `i != j`.
pub fn kernel_pair_average<F>(data: &SampleData, h: f64, spec: &KernelSpec, payload: F) -> Result<f64>
where
    F: Fn(usize, usize) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let n = data.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = spec.weight(data.distance(i, j) / h);
            if w > 0.0 {
                num += w * payload(i, j);
                den += w;
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::InsufficientPairs {
            bandwidth: h,
            pairs: 0,
            required: 1,
        });
    }
    Ok(num / den)
}

/// Half the kernel average of squared increments.
pub fn f_bar(data: &SampleData, h: f64, spec: &KernelSpec) -> Result<f64> {
    let m = pair_moments(data, &[h], spec, PairStrategy::Direct, Execution::default())?;
    m[0].require(1)?;
    Ok(m[0].f_bar())
}

/// Sample variance with divisor `n`.
pub fn sample_variance(data: &SampleData) -> f64 {
    let n = data.len() as f64;
    let mean = data.values().iter().sum::<f64>() / n;
    data.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// d-power mean of the nearest-neighbour distances, `(Σ Δ^d / N0)^(1/d)`.
pub fn estimate_step(data: &SampleData) -> Result<f64> {
    estimate_step_with(data, 1, Execution::default())
}

/// As [`estimate_step`] with the `neighbors` nearest neighbours of each point.
pub fn estimate_step_with(data: &SampleData, neighbors: usize, exec: Execution) -> Result<f64> {
    data.require_at_least(2)?;
    let n = data.len();
    if neighbors == 0 || neighbors >= n {
        return Err(Error::InvalidArgument(format!(
            "neighbour count must be in 1..{n}, got {neighbors}"
        )));
    }
    let d = data.dim() as i32;
    let rows: Vec<Result<f64>> = map_indexed(exec, n, |i| {
        let mut dists: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| data.distance(i, j)).collect();
        dists.select_nth_unstable_by(neighbors - 1, f64::total_cmp);
        dists.truncate(neighbors);
        if dists.contains(&0.0) {
            return Err(Error::DegenerateData(format!(
                "location {i} coincides with another sampling location"
            )));
        }
        Ok(dists.iter().map(|s| s.powi(d)).sum())
    });
    let mut total = 0.0;
    for r in rows {
        total += r?;
    }
    Ok((total / (n * neighbors) as f64).powf(1.0 / f64::from(d)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub phi1_bar: f64,
    pub s1_bar: f64,
    pub h1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEstimate {
    pub phi2_bar: f64,
    pub s2_bar: f64,
    pub h2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Fixed-point solve of `<s^p>_h = a^p` starting from the explicit bandwidth.
fn refine_bandwidth(
    data: &SampleData,
    spec: &KernelSpec,
    step: f64,
    start: f64,
    power: i32,
    opts: &ConstraintOptions,
) -> Result<f64> {
    let mut h = start;
    for _ in 0..100 {
        let m = pair_moments(data, &[h], spec, opts.strategy, opts.execution)?[0];
        m.require(opts.min_pairs)?;
        let moment = if power == 2 {
            m.mean_s2().sqrt()
        } else {
            m.mean_s4().powf(0.25)
        };
        let next = h * step / moment;
        if (next - h).abs() <= 1e-10 * h {
            return Ok(next);
        }
        h = next;
    }
    log::warn!("bandwidth refinement did not settle; using last iterate h = {h}");
    Ok(h)
}

fn gradient_bandwidth(data: &SampleData, spec: &KernelSpec, a1: f64, opts: &ConstraintOptions) -> Result<f64> {
    let h1 = bandwidth_for_gradient(a1, spec, data.dim())?;
    if opts.refine_bandwidths {
        refine_bandwidth(data, spec, a1, h1, 2, opts)
    } else {
        Ok(h1)
    }
}

fn curvature_bandwidth(data: &SampleData, spec: &KernelSpec, a2: f64, opts: &ConstraintOptions) -> Result<f64> {
    let h2 = bandwidth_for_curvature(a2, spec, data.dim())?;
    if opts.refine_bandwidths {
        refine_bandwidth(data, spec, a2, h2, 4, opts)
    } else {
        Ok(h2)
    }
}

/// Generalized-gradient sample constraint: `φ̄1 = d f̄(h1)`, `S̄1 = φ̄1 / a1^2`.
pub fn gradient_constraint(
    data: &SampleData,
    spec: &KernelSpec,
    a1: f64,
    opts: &ConstraintOptions,
) -> Result<GradientEstimate> {
    check_positive("gradient step", a1)?;
    data.require_at_least(2)?;
    let h1 = gradient_bandwidth(data, spec, a1, opts)?;
    let m = pair_moments(data, &[h1], spec, opts.strategy, opts.execution)?[0];
    m.require(opts.min_pairs)?;
    let phi1_bar = data.dim() as f64 * m.f_bar();
    Ok(GradientEstimate {
        phi1_bar,
        s1_bar: phi1_bar / (a1 * a1),
        h1,
    })
}

/// `μ1, μ2` from pair sums at `h2, √2 h2, 2 h2`.
pub fn mu_from_moments(
    d: usize,
    at_h: &PairMoments,
    at_sqrt2h: &PairMoments,
    at_2h: &PairMoments,
) -> Result<(f64, f64)> {
    let (c1, c2, c3) = (c1(d), c2(d), c3(d));
    let s2_1 = at_h.mean_s2();
    let s2_r = at_sqrt2h.mean_s2();
    let s2_2 = at_2h.mean_s2();
    let s4_1 = at_h.mean_s4();
    let s4_r = at_sqrt2h.mean_s4();
    let s4_2 = at_2h.mean_s4();
    let den2 = c3 * s4_r - c3 * s4_1 * s2_r / s2_1;
    if den2 == 0.0 || !den2.is_finite() {
        return Err(Error::DegenerateLayout(format!(
            "mu2 denominator vanishes (d = {d}, c3 = {c3})"
        )));
    }
    let mu2 = ((c2 + 8.0 * c1) * s4_1 + c1 * s4_1 * s2_2 / s2_1 - c1 * s4_2) / den2;
    let den1 = c2 * s2_1;
    if den1 == 0.0 || !den1.is_finite() {
        return Err(Error::DegenerateLayout("mu1 denominator vanishes".into()));
    }
    let mu1 = (c3 * mu2 * s2_r + c1 * s2_2) / den1;
    Ok((mu1, mu2))
}

/// Layout coefficients `μ1(h2), μ2(h2)` of the curvature estimator.
pub fn mu_coefficients(data: &SampleData, spec: &KernelSpec, h2: f64, opts: &ConstraintOptions) -> Result<(f64, f64)> {
    check_positive("curvature bandwidth", h2)?;
    let m = pair_moments(
        data,
        &[h2, std::f64::consts::SQRT_2 * h2, 2.0 * h2],
        spec,
        opts.strategy,
        opts.execution,
    )?;
    for mm in &m {
        mm.require(opts.min_pairs)?;
    }
    mu_from_moments(data.dim(), &m[0], &m[1], &m[2])
}

/// Generalized-curvature sample constraint
/// `φ̄2 = ½ [c2 μ1 f̄(h2) - c3 μ2 f̄(√2 h2) - c1 f̄(2 h2)]`, `S̄2 = φ̄2 / a2^4`.
///
/// In one dimension `c3 = 0`, the `√2 h2` term drops out and `μ2` is set to 1.
pub fn curvature_constraint(
    data: &SampleData,
    spec: &KernelSpec,
    a2: f64,
    opts: &ConstraintOptions,
) -> Result<CurvatureEstimate> {
    check_positive("curvature step", a2)?;
    data.require_at_least(2)?;
    let d = data.dim();
    let h2 = curvature_bandwidth(data, spec, a2, opts)?;
    let m = pair_moments(
        data,
        &[h2, std::f64::consts::SQRT_2 * h2, 2.0 * h2],
        spec,
        opts.strategy,
        opts.execution,
    )?;
    m[0].require(opts.min_pairs)?;
    if d > 1 {
        m[1].require(opts.min_pairs)?;
    }
    m[2].require(opts.min_pairs)?;
    let (mu1, mu2) = if d == 1 {
        let den = c2(1) * m[0].mean_s2();
        if den == 0.0 {
            return Err(Error::DegenerateLayout("mu1 denominator vanishes".into()));
        }
        (c1(1) * m[2].mean_s2() / den, 1.0)
    } else {
        mu_from_moments(d, &m[0], &m[1], &m[2])?
    };
    let middle = if d == 1 { 0.0 } else { c3(d) * mu2 * m[1].f_bar() };
    let phi2_bar = 0.5 * (c2(d) * mu1 * m[0].f_bar() - middle - c1(d) * m[2].f_bar());
    Ok(CurvatureEstimate {
        phi2_bar,
        s2_bar: phi2_bar / a2.powi(4),
        h2,
        mu1,
        mu2,
    })
}

/// Spatial averages of the lattice energy terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConstraints {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
}

/// Energy terms of a field on a full hypercubic lattice (row-major `values`
/// with the given `shape`, spacing `a`): `S0` after mean removal, `S1` with
/// forward differences, `S2 = (Σ_i Δ2^(i))^2` with centred second differences.
pub fn lattice_constraints(values: &[f64], shape: &[usize], a: f64) -> Result<LatticeConstraints> {
    check_positive("lattice spacing", a)?;
    if shape.is_empty() || shape.iter().product::<usize>() != values.len() {
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} does not match {} values",
            values.len()
        )));
    }
    if shape.iter().any(|&s| s < 3) {
        return Err(Error::InvalidArgument(format!(
            "lattice {shape:?} too small for the second-difference stencil (need >= 3 per axis)"
        )));
    }
    let dim = shape.len();
    let mut strides = vec![1usize; dim];
    for k in (0..dim - 1).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let s0 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;

    let mut idx = vec![0usize; dim];
    let (mut s1_sum, mut s1_count) = (0.0, 0usize);
    let (mut s2_sum, mut s2_count) = (0.0, 0usize);
    for flat in 0..n {
        let mut rem = flat;
        for k in 0..dim {
            idx[k] = rem / strides[k];
            rem %= strides[k];
        }
        let x = values[flat];
        if idx.iter().zip(shape).all(|(&i, &s)| i + 1 < s) {
            let grad: f64 = (0..dim)
                .map(|k| {
                    let dx = values[flat + strides[k]] - x;
                    dx * dx
                })
                .sum();
            s1_sum += grad / (a * a);
            s1_count += 1;
        }
        if idx.iter().zip(shape).all(|(&i, &s)| i >= 1 && i + 1 < s) {
            let lap: f64 = (0..dim)
                .map(|k| (values[flat + strides[k]] + values[flat - strides[k]] - 2.0 * x) / (a * a))
                .sum();
            s2_sum += lap * lap;
            s2_count += 1;
        }
    }
    Ok(LatticeConstraints {
        s0,
        s1: s1_sum / s1_count as f64,
        s2: s2_sum / s2_count as f64,
    })
}

/// Full set of sample constraints for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEstimates {
    pub dimension: usize,
    pub n: usize,
    pub s0_bar: f64,
    pub phi1_bar: f64,
    pub phi2_bar: f64,
    pub s1_bar: f64,
    pub s2_bar: f64,
    pub a1: f64,
    pub a2: f64,
    pub h1: f64,
    pub h2: f64,
    pub mu1: f64,
    pub mu2: f64,
}

/// Step estimate, then variance, gradient and curvature constraints with `a1 = a2`.
pub fn estimate_all(data: &SampleData, spec: &KernelSpec, opts: &ConstraintOptions) -> Result<ConstraintEstimates> {
    data.require_at_least(2)?;
    let a = estimate_step_with(data, opts.neighbors, opts.execution)?;
    let grad = gradient_constraint(data, spec, a, opts)?;
    let curv = curvature_constraint(data, spec, a, opts)?;
    Ok(ConstraintEstimates {
        dimension: data.dim(),
        n: data.len(),
        s0_bar: sample_variance(data),
        phi1_bar: grad.phi1_bar,
        phi2_bar: curv.phi2_bar,
        s1_bar: grad.s1_bar,
        s2_bar: curv.s2_bar,
        a1: a,
        a2: a,
        h1: grad.h1,
        h2: curv.h2,
        mu1: curv.mu1,
        mu2: curv.mu2,
    })
}
