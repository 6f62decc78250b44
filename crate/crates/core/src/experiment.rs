//! Monte Carlo drivers: covariance-fit experiment, kriging cross-validation,
//! estimator bias/variance study and the kernel bias table.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Max, Min, OrderStatistics};

use crate::constraints::{c1, c2, c3, estimate_all, ConstraintEstimates, ConstraintOptions};
use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::inference::{fit_ssrf, FitConfig, FitResult};
use crate::kernels::{bias_table_row, BiasTableRow, KernelFamily, KernelSpec};
use crate::kriging::{cross_validate, isolated_points, CrossValReport, Split};
use crate::par::{map_indexed, Execution};
use crate::sample::SampleData;
use crate::simulate::{
    covariance_matrix, factor_covariance, gaussian_field, model_covariance, replicate_rng, sample_locations,
    CovarianceFn, CovarianceModel, SimulationPlan,
};
use crate::spectral::{covariance_curve, default_lags, QuadratureConfig};

/// Stream index reserved for drawing a fixed layout.
const LAYOUT_STREAM: u64 = u64::MAX;

fn standard_models() -> Vec<CovarianceModel> {
    vec![
        CovarianceModel::Spherical {
            sigma2: 1.0,
            range: 1.0,
        },
        CovarianceModel::Exponential {
            sigma2: 1.0,
            range: 0.5,
        },
        CovarianceModel::Gaussian {
            sigma2: 1.0,
            range: 1.0,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovExperimentConfig {
    pub models: Vec<CovarianceModel>,
    pub n: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: f64,
    pub replicates: usize,
    pub seed: u64,
    pub kernel: KernelFamily,
    pub lags: Vec<f64>,
    pub fit: FitConfig,
    pub quadrature: QuadratureConfig,
    pub execution: Execution,
}

impl Default for CovExperimentConfig {
    fn default() -> Self {
        CovExperimentConfig {
            models: standard_models(),
            n: 200,
            lower: vec![0.0, 0.0],
            upper: vec![5.0, 5.0],
            mean: 0.0,
            replicates: 100,
            seed: 1,
            kernel: KernelFamily::Triangular,
            lags: default_lags(),
            fit: FitConfig::default(),
            quadrature: QuadratureConfig::default(),
            execution: Execution::default(),
        }
    }
}

/// Fitted curve of one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateCurve {
    pub replicate: usize,
    pub fit: FitResult,
    pub covariance: Vec<f64>,
    pub correlation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl FiveNumber {
    /// Quantiles by the median-unbiased rule of `statrs`.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut data = Data::new(values.to_vec());
        Some(FiveNumber {
            min: data.min(),
            q25: data.quantile(0.25),
            median: data.median(),
            q75: data.quantile(0.75),
            max: data.max(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub model: CovarianceModel,
    pub lags: Vec<f64>,
    pub true_covariance: Vec<f64>,
    pub curves: Vec<ReplicateCurve>,
    /// Replicates whose fit failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl ModelBlock {
    pub fn true_correlation(&self) -> Vec<f64> {
        let c0 = self.true_covariance[0];
        self.true_covariance.iter().map(|c| c / c0).collect()
    }

    /// Lag-wise box-plot summaries of fitted covariance and correlation.
    pub fn summary(&self) -> Vec<(FiveNumber, FiveNumber)> {
        (0..self.lags.len())
            .filter_map(|k| {
                let cov: Vec<f64> = self.curves.iter().map(|c| c.covariance[k]).collect();
                let cor: Vec<f64> = self.curves.iter().map(|c| c.correlation[k]).collect();
                Some((FiveNumber::of(&cov)?, FiveNumber::of(&cor)?))
            })
            .collect()
    }

    /// Mean over replicates and lags of `|ρ_fit - ρ_true|`.
    pub fn mean_abs_correlation_error(&self) -> Option<f64> {
        if self.curves.is_empty() {
            return None;
        }
        let truth = self.true_correlation();
        let total: f64 = self
            .curves
            .iter()
            .flat_map(|c| c.correlation.iter().zip(&truth).map(|(a, b)| (a - b).abs()))
            .sum();
        Some(total / (self.curves.len() * truth.len()) as f64)
    }

    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.write_curve_rows(&self.curves, writer)
    }

    /// Curve of a single replicate, same layout as [`Self::write_curves_csv`].
    pub fn write_replicate_csv<W: Write>(&self, curve: &ReplicateCurve, writer: W) -> Result<()> {
        self.write_curve_rows(std::slice::from_ref(curve), writer)
    }

    fn write_curve_rows<W: Write>(&self, curves: &[ReplicateCurve], writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "replicate",
            "lag",
            "covariance",
            "correlation",
            "true_covariance",
            "true_correlation",
        ])?;
        let truth = self.true_correlation();
        for c in curves {
            for (k, lag) in self.lags.iter().enumerate() {
                wtr.write_record([
                    c.replicate.to_string(),
                    sig(*lag),
                    sig(c.covariance[k]),
                    sig(c.correlation[k]),
                    sig(self.true_covariance[k]),
                    sig(truth[k]),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["lag".to_string(), "true_covariance".into(), "true_correlation".into()];
        for what in ["cov", "cor"] {
            for stat in ["min", "q25", "median", "q75", "max"] {
                header.push(format!("{what}_{stat}"));
            }
        }
        wtr.write_record(&header)?;
        let truth = self.true_correlation();
        for (k, (cov, cor)) in self.summary().iter().enumerate() {
            let mut row = vec![sig(self.lags[k]), sig(self.true_covariance[k]), sig(truth[k])];
            for f in [cov, cor] {
                row.extend([f.min, f.q25, f.median, f.q75, f.max].map(sig));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Simulate, fit and evaluate the fitted covariance on the lag grid, for
/// every model and replicate.
pub fn run_cov_experiment(cfg: &CovExperimentConfig) -> Result<Vec<ModelBlock>> {
    if cfg.models.is_empty() || cfg.lags.is_empty() {
        return Err(Error::InvalidArgument(
            "experiment needs at least one model and one lag".into(),
        ));
    }
    let spec = KernelSpec::new(cfg.kernel);
    cfg.models
        .iter()
        .map(|model| {
            let plan = SimulationPlan {
                n: cfg.n,
                lower: cfg.lower.clone(),
                upper: cfg.upper.clone(),
                model: *model,
                mean: cfg.mean,
                replicates: cfg.replicates,
                seed: cfg.seed,
            };
            plan.validate()?;
            let cov = CovarianceFn::new(model, plan.diameter(), &cfg.quadrature, cfg.execution)?;
            let true_covariance = cfg
                .lags
                .iter()
                .map(|&r| model_covariance(model, r, &cfg.quadrature))
                .collect::<Result<Vec<f64>>>()?;
            let outcomes = map_indexed(
                cfg.execution,
                cfg.replicates,
                |m| -> Result<std::result::Result<ReplicateCurve, String>> {
                    let data = plan.replicate_with(m as u64, &cov)?;
                    let fit = match fit_ssrf(&data, &spec, &cfg.fit, &cfg.quadrature) {
                        Ok(f) => f,
                        Err(e) => return Ok(Err(e.to_string())),
                    };
                    let d = data.dim();
                    let points = covariance_curve(&fit.params, d, &cfg.lags, &cfg.quadrature)?;
                    Ok(Ok(ReplicateCurve {
                        replicate: m,
                        fit,
                        covariance: points.iter().map(|p| p.covariance).collect(),
                        correlation: points.iter().map(|p| p.correlation).collect(),
                    }))
                },
            );
            let mut curves = Vec::new();
            let mut failures = Vec::new();
            for (m, o) in outcomes.into_iter().enumerate() {
                match o? {
                    Ok(c) => curves.push(c),
                    Err(msg) => {
                        log::warn!("{} replicate {m}: fit failed: {msg}", model.name());
                        failures.push((m, msg));
                    }
                }
            }
            Ok(ModelBlock {
                model: *model,
                lags: cfg.lags.clone(),
                true_covariance,
                curves,
                failures,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossValConfig {
    pub n: usize,
    pub n_validation: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mean: f64,
    pub model: CovarianceModel,
    pub replicates: usize,
    pub seed: u64,
    pub kernel: KernelFamily,
    /// Fit the SSRF model on every replicate instead of only the first.
    /// With a single fit, a failure of that fit is an error.
    pub refit_each_replicate: bool,
    /// Validation points with no training point within this distance are
    /// flagged as isolated. Defaults to the lag where the true covariance
    /// drops to 5% of its variance.
    pub isolation_range: Option<f64>,
    pub fit: FitConfig,
    pub quadrature: QuadratureConfig,
    pub execution: Execution,
}

impl Default for CrossValConfig {
    fn default() -> Self {
        CrossValConfig {
            n: 110,
            n_validation: 10,
            lower: vec![0.0, 0.0],
            upper: vec![100.0, 100.0],
            mean: 70.0,
            model: CovarianceModel::Exponential {
                sigma2: 100.0,
                range: 4.0,
            },
            replicates: 100,
            seed: 1,
            kernel: KernelFamily::Triangular,
            refit_each_replicate: false,
            isolation_range: None,
            fit: FitConfig::default(),
            quadrature: QuadratureConfig::default(),
            execution: Execution::default(),
        }
    }
}

/// Lag at which the covariance falls to 5% of the variance (bisection).
pub fn practical_range(model: &CovarianceModel, max_lag: f64, q: &QuadratureConfig) -> Result<f64> {
    let c0 = model.variance(q)?;
    let (mut lo, mut hi) = (0.0, max_lag);
    if model_covariance(model, hi, q)? > 0.05 * c0 {
        return Ok(max_lag);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if model_covariance(model, mid, q)? > 0.05 * c0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValOutcome {
    pub coords: Vec<f64>,
    pub dim: usize,
    pub split: Split,
    pub isolation_range: f64,
    pub isolated: Vec<bool>,
    pub report: CrossValReport,
    /// Replicate fits used for the SSRF covariance.
    pub fits: Vec<FitResult>,
    /// Replicates dropped because their fit failed.
    pub failures: Vec<(usize, String)>,
}

pub fn run_crossval(cfg: &CrossValConfig) -> Result<CrossValOutcome> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidArgument(
            "cross-validation needs at least one replicate".into(),
        ));
    }
    let dim = cfg.lower.len();
    let plan = SimulationPlan {
        n: cfg.n,
        lower: cfg.lower.clone(),
        upper: cfg.upper.clone(),
        model: cfg.model,
        mean: cfg.mean,
        replicates: cfg.replicates,
        seed: cfg.seed,
    };
    plan.validate()?;
    let q = &cfg.quadrature;
    let diameter = plan.diameter();
    let mut layout_rng = replicate_rng(cfg.seed, LAYOUT_STREAM);
    let coords = sample_locations(cfg.n, &cfg.lower, &cfg.upper, &mut layout_rng);
    let split = Split::random(cfg.n, cfg.n_validation, &mut layout_rng)?;
    let isolation_range = match cfg.isolation_range {
        Some(r) => r,
        None => practical_range(&cfg.model, diameter, q)?,
    };
    let isolated = isolated_points(&coords, dim, &split, isolation_range);

    let true_cov = CovarianceFn::new(&cfg.model, diameter, q, cfg.execution)?;
    let l = factor_covariance(&covariance_matrix(&coords, dim, &true_cov)?, true_cov.at_origin())?;
    let fields: Vec<Vec<f64>> = (0..cfg.replicates)
        .map(|m| gaussian_field(&l, cfg.mean, &mut replicate_rng(cfg.seed, m as u64)))
        .collect();

    let train_coords: Vec<f64> = split
        .train
        .iter()
        .flat_map(|&i| coords[i * dim..(i + 1) * dim].iter().copied())
        .collect();
    let spec = KernelSpec::new(cfg.kernel);
    let fit_count = if cfg.refit_each_replicate { cfg.replicates } else { 1 };
    let fitted = map_indexed(
        cfg.execution,
        fit_count,
        |m| -> std::result::Result<(FitResult, CovarianceFn), String> {
            let values: Vec<f64> = split.train.iter().map(|&i| fields[m][i]).collect();
            let train = SampleData::new(dim, train_coords.clone(), values).map_err(|e| e.to_string())?;
            let fit = fit_ssrf(&train, &spec, &cfg.fit, q).map_err(|e| e.to_string())?;
            let model = CovarianceModel::Ssrf {
                params: fit.params,
                dimension: dim,
            };
            let cov = CovarianceFn::new(&model, diameter, q, Execution::Sequential).map_err(|e| e.to_string())?;
            Ok((fit, cov))
        },
    );

    let mut fits = Vec::new();
    let mut covs = Vec::new();
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    for (m, f) in fitted.into_iter().enumerate() {
        match f {
            Ok((fit, cov)) => {
                fits.push(fit);
                covs.push(cov);
                kept.push(fields[m].clone());
            }
            Err(msg) => {
                log::warn!("replicate {m}: fit failed: {msg}");
                failures.push((m, msg));
            }
        }
    }
    if covs.is_empty() {
        let reason = failures.first().map_or(String::new(), |(_, m)| m.clone());
        return Err(Error::DegenerateData(format!("no SSRF fit succeeded: {reason}")));
    }
    let replicates = if cfg.refit_each_replicate { kept } else { fields };
    let report = cross_validate(&coords, dim, &split, &replicates, &true_cov, &covs, cfg.execution)?;
    Ok(CrossValOutcome {
        coords,
        dim,
        split,
        isolation_range,
        isolated,
        report,
        fits,
        failures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub model: CovarianceModel,
    pub sizes: Vec<usize>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub kernel: KernelFamily,
    pub constraints: ConstraintOptions,
    pub quadrature: QuadratureConfig,
    pub execution: Execution,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            model: CovarianceModel::Exponential {
                sigma2: 1.0,
                range: 0.5,
            },
            sizes: vec![100, 200, 400],
            lower: vec![0.0, 0.0],
            upper: vec![5.0, 5.0],
            replicates: 100,
            seed: 1,
            kernel: KernelFamily::Triangular,
            constraints: ConstraintOptions::default(),
            quadrature: QuadratureConfig::default(),
            execution: Execution::default(),
        }
    }
}

/// Sample constraints of one replicate with the matching true targets
/// `d F(a1)` and `½ [c2 F(a2) - c3 F(√2 a2) - c1 F(2 a2)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasSample {
    pub constraints: ConstraintEstimates,
    pub target_phi1: f64,
    pub target_phi2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub n: usize,
    pub replicates: usize,
    pub mean_a1: f64,
    pub mean_h1: f64,
    pub mean_h2: f64,
    pub mean_phi1: f64,
    pub var_phi1: f64,
    pub mean_target_phi1: f64,
    pub mean_rel_bias_phi1: f64,
    pub mean_phi2: f64,
    pub var_phi2: f64,
    pub mean_target_phi2: f64,
    pub mean_rel_bias_phi2: f64,
    pub failures: usize,
}

fn semivariogram_of(model: &CovarianceModel, r: f64, q: &QuadratureConfig) -> Result<f64> {
    Ok(model.variance(q)? - model_covariance(model, r, q)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with divisor `M - 1`.
fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0).max(1.0)
}

pub fn bias_samples(cfg: &BiasConfig, n: usize) -> Result<(Vec<BiasSample>, usize)> {
    let plan = SimulationPlan {
        n,
        lower: cfg.lower.clone(),
        upper: cfg.upper.clone(),
        model: cfg.model,
        mean: 0.0,
        replicates: cfg.replicates,
        seed: cfg.seed,
    };
    plan.validate()?;
    let q = &cfg.quadrature;
    let cov = CovarianceFn::new(&cfg.model, plan.diameter(), q, cfg.execution)?;
    let spec = KernelSpec::new(cfg.kernel);
    let d = plan.dim();
    let results = map_indexed(cfg.execution, cfg.replicates, |m| -> Result<Option<BiasSample>> {
        let data = plan.replicate_with(m as u64, &cov)?;
        let c = match estimate_all(&data, &spec, &cfg.constraints) {
            Ok(c) => c,
            Err(e) => {
                log::warn!("n = {n}, replicate {m}: {e}");
                return Ok(None);
            }
        };
        let f = |r: f64| semivariogram_of(&cfg.model, r, q);
        let target_phi1 = d as f64 * f(c.a1)?;
        let fr = if d > 1 {
            f(std::f64::consts::SQRT_2 * c.a2)?
        } else {
            0.0
        };
        let target_phi2 = 0.5 * (c2(d) * f(c.a2)? - c3(d) * fr - c1(d) * f(2.0 * c.a2)?);
        Ok(Some(BiasSample {
            constraints: c,
            target_phi1,
            target_phi2,
        }))
    });
    let mut samples = Vec::new();
    let mut failures = 0;
    for r in results {
        match r? {
            Some(s) => samples.push(s),
            None => failures += 1,
        }
    }
    Ok((samples, failures))
}

pub fn bias_row(n: usize, samples: &[BiasSample], failures: usize) -> BiasRow {
    let col = |f: &dyn Fn(&BiasSample) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
    let phi1 = col(&|s| s.constraints.phi1_bar);
    let phi2 = col(&|s| s.constraints.phi2_bar);
    BiasRow {
        n,
        replicates: samples.len(),
        mean_a1: mean(&col(&|s| s.constraints.a1)),
        mean_h1: mean(&col(&|s| s.constraints.h1)),
        mean_h2: mean(&col(&|s| s.constraints.h2)),
        mean_phi1: mean(&phi1),
        var_phi1: variance(&phi1),
        mean_target_phi1: mean(&col(&|s| s.target_phi1)),
        mean_rel_bias_phi1: mean(&col(&|s| s.constraints.phi1_bar / s.target_phi1 - 1.0)),
        mean_phi2: mean(&phi2),
        var_phi2: variance(&phi2),
        mean_target_phi2: mean(&col(&|s| s.target_phi2)),
        mean_rel_bias_phi2: mean(&col(&|s| s.constraints.phi2_bar / s.target_phi2 - 1.0)),
        failures,
    }
}

/// Empirical bias and variance of `φ̄1`, `φ̄2` for every sample size.
pub fn run_bias_study(cfg: &BiasConfig) -> Result<Vec<BiasRow>> {
    if cfg.sizes.is_empty() || cfg.replicates < 2 {
        return Err(Error::InvalidArgument(
            "bias study needs sample sizes and at least 2 replicates".into(),
        ));
    }
    cfg.sizes
        .iter()
        .map(|&n| {
            let (samples, failures) = bias_samples(cfg, n)?;
            if samples.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "only {} usable replicates at n = {n}",
                    samples.len()
                )));
            }
            Ok(bias_row(n, &samples, failures))
        })
        .collect()
}

pub fn write_bias_csv<W: Write>(rows: &[BiasRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "n",
        "replicates",
        "mean_a1",
        "mean_h1",
        "mean_h2",
        "mean_phi1",
        "var_phi1",
        "mean_target_phi1",
        "mean_rel_bias_phi1",
        "mean_phi2",
        "var_phi2",
        "mean_target_phi2",
        "mean_rel_bias_phi2",
        "failures",
    ])?;
    for r in rows {
        let mut row = vec![r.n.to_string(), r.replicates.to_string()];
        row.extend(
            [
                r.mean_a1,
                r.mean_h1,
                r.mean_h2,
                r.mean_phi1,
                r.var_phi1,
                r.mean_target_phi1,
                r.mean_rel_bias_phi1,
                r.mean_phi2,
                r.var_phi2,
                r.mean_target_phi2,
                r.mean_rel_bias_phi2,
            ]
            .map(sig),
        );
        row.push(r.failures.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn table1(kernels: &[KernelFamily], d: usize) -> Result<Vec<BiasTableRow>> {
    kernels.iter().map(|&k| bias_table_row(k, d)).collect()
}

pub fn write_table1_csv<W: Write>(rows: &[BiasTableRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["kernel", "d", "b12", "b2", "psi1", "b14", "b4", "psi2", "note"])?;
    for r in rows {
        let mut row = vec![r.kernel.to_string(), r.dimension.to_string()];
        row.extend([r.b12, r.b2, r.psi1, r.b14, r.b4, r.psi2].map(sig));
        row.push(r.discrepancy.clone().unwrap_or_default());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
