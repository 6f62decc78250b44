use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use ssrf_core::constraints::{estimate_all, ConstraintOptions, PairStrategy};
use ssrf_core::experiment::{
    run_bias_study, run_cov_experiment, run_crossval, table1 as table1_rows, write_bias_csv, write_table1_csv,
    BiasConfig, CovExperimentConfig, CrossValConfig,
};
use ssrf_core::fmt::round_sig;
use ssrf_core::inference::{fit_ssrf, FitConfig, FitReport};
use ssrf_core::par::Execution;
use ssrf_core::simulate::{CovarianceModel, SimulationPlan};
use ssrf_core::spectral::{covariance_curve, uniform_lags, write_curve_csv};
use ssrf_core::{KernelFamily, KernelSpec, QuadratureConfig, SampleData};

use crate::config::{load, require_seed};
use crate::{CliError, ConstraintsArgs, ExperimentArgs, FitArgs, McBiasArgs, SimulateArgs, Table1Args};

type Result<T> = std::result::Result<T, CliError>;

const ALL_KERNELS: [KernelFamily; 4] = [
    KernelFamily::Triangular,
    KernelFamily::Quadratic,
    KernelFamily::Tricube,
    KernelFamily::Gaussian,
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.into(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Write {
            path: path.into(),
            source,
        })
}

/// Runs `f` on the file at `path`, or on stdout.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush().map_err(|source| CliError::Write { path: p.into(), source })
        }
        None => {
            let mut w = io::stdout().lock();
            f(&mut w)?;
            w.flush().map_err(|source| CliError::Write {
                path: "<stdout>".into(),
                source,
            })
        }
    }
}

fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_sig(x)))
            .map_or(Value::Number(n), Value::Number),
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let tree = round_json(serde_json::to_value(value).map_err(|e| CliError::Config(e.to_string()))?);
    emit(path, |w| {
        serde_json::to_writer_pretty(&mut *w, &tree).map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(w).map_err(|source| CliError::Write {
            path: "<output>".into(),
            source,
        })
    })
}

fn execution(sequential: bool, configured: Execution) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        configured
    }
}

fn read_data(path: &Path, dimension: Option<usize>) -> Result<SampleData> {
    let data = SampleData::read_csv_path(path)?;
    if let Some(d) = dimension {
        if d != data.dim() {
            return Err(CliError::Config(format!(
                "{} has {} coordinate columns, --dimension says {d}",
                path.display(),
                data.dim()
            )));
        }
    }
    if data.len() < 2 {
        return Err(ssrf_core::Error::InsufficientData(format!(
            "{} holds {} row(s), at least 2 required",
            path.display(),
            data.len()
        ))
        .into());
    }
    Ok(data)
}

fn warn_if_constant(data: &SampleData) {
    let v = data.values();
    if v.iter().all(|&x| x == v[0]) {
        log::warn!("all values are equal ({}); the constraints are zero", v[0]);
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct ConstraintsFile {
    kernel: KernelFamily,
    constraints: ConstraintOptions,
}

impl Default for ConstraintsFile {
    fn default() -> Self {
        ConstraintsFile {
            kernel: KernelFamily::Triangular,
            constraints: ConstraintOptions::default(),
        }
    }
}

pub fn constraints(args: &ConstraintsArgs, sequential: bool) -> Result<()> {
    let (mut cfg, _) = load::<ConstraintsFile>(args.config.as_deref())?;
    if let Some(k) = args.kernel {
        cfg.kernel = k;
    }
    if let Some(m) = args.min_pairs {
        cfg.constraints.min_pairs = m;
    }
    if args.binned {
        cfg.constraints.strategy = PairStrategy::Binned;
    }
    cfg.constraints.execution = execution(sequential, cfg.constraints.execution);
    let data = read_data(&args.input, args.dimension)?;
    warn_if_constant(&data);
    let c = estimate_all(&data, &KernelSpec::new(cfg.kernel), &cfg.constraints)?;
    write_json(&c, args.output.as_deref())
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct FitFile {
    kernel: KernelFamily,
    fit: FitConfig,
    quadrature: QuadratureConfig,
    max_lag: f64,
    lag_intervals: usize,
}

impl Default for FitFile {
    fn default() -> Self {
        FitFile {
            kernel: KernelFamily::Triangular,
            fit: FitConfig::default(),
            quadrature: QuadratureConfig::default(),
            max_lag: 1.2,
            lag_intervals: 10,
        }
    }
}

#[derive(Serialize)]
struct FitOutput {
    kernel: KernelFamily,
    #[serde(flatten)]
    report: FitReport,
}

pub fn fit(args: &FitArgs, sequential: bool) -> Result<()> {
    let (mut cfg, _) = load::<FitFile>(args.config.as_deref())?;
    if let Some(k) = args.kernel {
        cfg.kernel = k;
    }
    if let Some(b) = args.beta {
        cfg.fit.beta = b;
    }
    if args.freeze_kc {
        cfg.fit.freeze_kc = true;
    }
    if let Some(r) = args.restarts {
        cfg.fit.restarts = r;
    }
    if let Some(s) = args.seed {
        cfg.fit.seed = s;
    }
    if let Some(m) = args.max_lag {
        cfg.max_lag = m;
    }
    if let Some(n) = args.lag_intervals {
        cfg.lag_intervals = n;
    }
    if !cfg.max_lag.is_finite() || cfg.max_lag <= 0.0 || cfg.lag_intervals == 0 {
        return Err(CliError::Config(
            "the curve needs max_lag > 0 and at least one lag interval".into(),
        ));
    }
    cfg.fit.constraints.execution = execution(sequential, cfg.fit.constraints.execution);
    let data = read_data(&args.input, None)?;
    warn_if_constant(&data);
    let result = fit_ssrf(&data, &KernelSpec::new(cfg.kernel), &cfg.fit, &cfg.quadrature)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    if let Some(path) = &args.curve {
        let lags = uniform_lags(cfg.max_lag, cfg.lag_intervals);
        let points = covariance_curve(&result.params, data.dim(), &lags, &cfg.quadrature)?;
        emit(Some(path), |w| Ok(write_curve_csv(&points, w)?))?;
    }
    write_json(
        &FitOutput {
            kernel: cfg.kernel,
            report: result.report(),
        },
        args.output.as_deref(),
    )
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct SimulateFile {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    model: CovarianceModel,
    mean: f64,
    replicates: usize,
    seed: u64,
    quadrature: QuadratureConfig,
    execution: Execution,
}

impl Default for SimulateFile {
    fn default() -> Self {
        SimulateFile {
            n: 200,
            lower: vec![0.0, 0.0],
            upper: vec![5.0, 5.0],
            model: CovarianceModel::Exponential {
                sigma2: 1.0,
                range: 0.5,
            },
            mean: 0.0,
            replicates: 1,
            seed: 0,
            quadrature: QuadratureConfig::default(),
            execution: Execution::default(),
        }
    }
}

pub fn simulate(args: &SimulateArgs, sequential: bool) -> Result<()> {
    let (cfg, has_seed) = load::<SimulateFile>(args.config.as_deref())?;
    let plan = SimulationPlan {
        n: args.n.unwrap_or(cfg.n),
        lower: cfg.lower,
        upper: cfg.upper,
        model: cfg.model,
        mean: cfg.mean,
        replicates: args.replicates.unwrap_or(cfg.replicates),
        seed: require_seed(args.seed, has_seed, cfg.seed)?,
    };
    if plan.replicates > 1 && args.out_dir.is_none() {
        return Err(CliError::Config("more than one replicate needs --out-dir".into()));
    }
    let fields = plan.run(&cfg.quadrature, execution(sequential, cfg.execution))?;
    match &args.out_dir {
        Some(dir) => {
            for (m, data) in fields.iter().enumerate() {
                emit(Some(&dir.join(format!("replicate_{:04}.csv", m + 1))), |w| {
                    Ok(data.write_csv(w)?)
                })?;
            }
            Ok(())
        }
        None => emit(args.output.as_deref(), |w| Ok(fields[0].write_csv(w)?)),
    }
}

/// One directory name per model, disambiguated when a family repeats.
fn model_dirs(models: &[CovarianceModel]) -> Vec<String> {
    models
        .iter()
        .enumerate()
        .map(|(k, m)| {
            if models.iter().filter(|o| o.name() == m.name()).count() > 1 {
                format!("{}_{}", m.name(), k + 1)
            } else {
                m.name().to_string()
            }
        })
        .collect()
}

pub fn experiment_cov(args: &ExperimentArgs, sequential: bool) -> Result<()> {
    let (mut cfg, has_seed) = load::<CovExperimentConfig>(args.config.as_deref())?;
    cfg.seed = require_seed(args.seed, has_seed, cfg.seed)?;
    if let Some(m) = args.replicates {
        cfg.replicates = m;
    }
    cfg.execution = execution(sequential, cfg.execution);
    let blocks = run_cov_experiment(&cfg)?;
    for (block, name) in blocks.iter().zip(model_dirs(&cfg.models)) {
        let dir = args.out_dir.join(&name);
        for (m, reason) in &block.failures {
            log::warn!("{name}: replicate {} failed: {reason}", m + 1);
        }
        for curve in &block.curves {
            let path = dir.join(format!("replicate_{:04}.csv", curve.replicate + 1));
            emit(Some(&path), |w| Ok(block.write_replicate_csv(curve, w)?))?;
        }
        emit(Some(&dir.join("summary.csv")), |w| Ok(block.write_summary_csv(w)?))?;
        if let Some(err) = block.mean_abs_correlation_error() {
            log::info!(
                "{name}: {} fits, mean |rho_fit - rho_true| = {err:.4}",
                block.curves.len()
            );
        }
    }
    Ok(())
}

pub fn crossval(args: &ExperimentArgs, sequential: bool) -> Result<()> {
    let (mut cfg, has_seed) = load::<CrossValConfig>(args.config.as_deref())?;
    cfg.seed = require_seed(args.seed, has_seed, cfg.seed)?;
    if let Some(m) = args.replicates {
        cfg.replicates = m;
    }
    cfg.execution = execution(sequential, cfg.execution);
    let out = run_crossval(&cfg)?;
    for (m, reason) in &out.failures {
        log::warn!("replicate {} fit failed: {reason}", m + 1);
    }
    let isolated = out.isolated.iter().filter(|&&b| b).count();
    log::info!(
        "{isolated} validation point(s) without a training point within {:.4}",
        out.isolation_range
    );
    let dir = &args.out_dir;
    emit(Some(&dir.join("crossval.csv")), |w| Ok(out.report.write_csv(w)?))?;
    emit(Some(&dir.join("split.csv")), |w| {
        Ok(out.split.write_csv(&out.coords, out.dim, w)?)
    })?;
    let fits: Vec<FitReport> = out.fits.iter().map(|f| f.report()).collect();
    write_json(&fits, Some(&dir.join("fits.json")))
}

pub fn table1(args: &Table1Args) -> Result<()> {
    let kernels = if args.kernels.is_empty() {
        ALL_KERNELS.to_vec()
    } else {
        args.kernels.clone()
    };
    let rows = table1_rows(&kernels, args.dimension)?;
    for r in &rows {
        if let Some(note) = &r.discrepancy {
            log::warn!("{}: {note}", r.kernel);
        }
    }
    emit(args.output.as_deref(), |w| Ok(write_table1_csv(&rows, w)?))
}

pub fn mc_bias(args: &McBiasArgs, sequential: bool) -> Result<()> {
    let (mut cfg, has_seed) = load::<BiasConfig>(args.config.as_deref())?;
    cfg.seed = require_seed(args.seed, has_seed, cfg.seed)?;
    if let Some(m) = args.replicates {
        cfg.replicates = m;
    }
    if !args.sizes.is_empty() {
        cfg.sizes = args.sizes.clone();
    }
    cfg.execution = execution(sequential, cfg.execution);
    let rows = run_bias_study(&cfg)?;
    for r in rows.iter().filter(|r| r.failures > 0) {
        log::warn!("n = {}: {} replicate(s) failed", r.n, r.failures);
    }
    emit(args.output.as_deref(), |w| Ok(write_bias_csv(&rows, w)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_numbers_are_rounded() {
        let v = round_json(serde_json::json!({"a": [1.0 / 3.0], "b": 2, "c": "x"}));
        assert_eq!(v, serde_json::json!({"a": [0.333333333], "b": 2, "c": "x"}));
    }

    #[test]
    fn repeated_families_get_distinct_dirs() {
        let e = CovarianceModel::Exponential {
            sigma2: 1.0,
            range: 1.0,
        };
        let g = CovarianceModel::Gaussian {
            sigma2: 1.0,
            range: 1.0,
        };
        assert_eq!(model_dirs(&[e, g, e]), ["exponential_1", "gaussian", "exponential_3"]);
    }

    #[test]
    fn sequential_flag_wins() {
        assert_eq!(execution(true, Execution::Parallel), Execution::Sequential);
        assert_eq!(execution(false, Execution::Parallel), Execution::Parallel);
    }
}
