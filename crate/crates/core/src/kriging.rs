//! Ordinary kriging with a global neighbourhood, and cross-validation
//! statistics of relative prediction errors.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::par::{map_indexed, Execution};
use crate::sample::{distance, SampleData};
use crate::simulate::CovarianceFn;

/// LU factorization with partial pivoting of a dense row-major matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(n: usize, mut a: Vec<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries, got {}",
                n * n,
                a.len()
            )));
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pivot <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::SingularSystem(format!("zero pivot in column {k}")));
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let akk = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / akk;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Ok(Lu { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}

/// Factored ordinary-kriging system `[C 1; 1ᵀ 0]` for one training layout.
#[derive(Clone, Debug)]
pub struct KrigingSystem {
    dim: usize,
    coords: Vec<f64>,
    lu: Lu,
}

impl KrigingSystem {
    pub fn new(coords: &[f64], dim: usize, cov: &CovarianceFn) -> Result<Self> {
        if dim == 0 || coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument("need at least one training location".into()));
        }
        let n = coords.len() / dim;
        let loc = |i: usize| &coords[i * dim..(i + 1) * dim];
        for i in 0..n {
            for j in 0..i {
                if loc(i) == loc(j) {
                    return Err(Error::SingularSystem(format!(
                        "training locations {j} and {i} coincide"
                    )));
                }
            }
        }
        let m = n + 1;
        let mut a = vec![0.0; m * m];
        let c0 = cov.at_origin();
        for i in 0..n {
            a[i * m + i] = c0;
            for j in 0..i {
                let v = cov.eval(distance(loc(i), loc(j)));
                a[i * m + j] = v;
                a[j * m + i] = v;
            }
            a[i * m + n] = 1.0;
            a[n * m + i] = 1.0;
        }
        let lu = Lu::new(m, a)?;
        Ok(KrigingSystem {
            dim,
            coords: coords.to_vec(),
            lu,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Weights and Lagrange multiplier for one target location.
    pub fn weights(&self, target: &[f64], cov: &CovarianceFn) -> Result<(Vec<f64>, f64)> {
        if target.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "target has {} coordinates, expected {}",
                target.len(),
                self.dim
            )));
        }
        let mut rhs: Vec<f64> = self
            .coords
            .chunks_exact(self.dim)
            .map(|s| cov.eval(distance(s, target)))
            .collect();
        rhs.push(1.0);
        let mut x = self.lu.solve(&rhs);
        let mu = x.pop().unwrap_or(0.0);
        Ok((x, mu))
    }

    pub fn predict(&self, values: &[f64], target: &[f64], cov: &CovarianceFn) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "{} values for {} training locations",
                values.len(),
                self.len()
            )));
        }
        let (w, _) = self.weights(target, cov)?;
        Ok(w.iter().zip(values).map(|(a, b)| a * b).sum())
    }
}

/// Solves the ordinary-kriging system for a single target.
pub fn kriging_weights(coords: &[f64], dim: usize, target: &[f64], cov: &CovarianceFn) -> Result<(Vec<f64>, f64)> {
    KrigingSystem::new(coords, dim, cov)?.weights(target, cov)
}

/// Predictions at row-major `targets` from the training sample.
pub fn predict(train: &SampleData, targets: &[f64], cov: &CovarianceFn) -> Result<Vec<f64>> {
    let sys = KrigingSystem::new(train.coords(), train.dim(), cov)?;
    targets
        .chunks_exact(train.dim())
        .map(|t| sys.predict(train.values(), t, cov))
        .collect()
}

/// Partition of a layout into training and validation indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl Split {
    /// `n_validation` points chosen uniformly at random; both index lists sorted.
    pub fn random<R: Rng + ?Sized>(n: usize, n_validation: usize, rng: &mut R) -> Result<Self> {
        if n_validation == 0 || n_validation >= n {
            return Err(Error::InvalidArgument(format!(
                "validation size must be in 1..{n}, got {n_validation}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut validation = idx[..n_validation].to_vec();
        let mut train = idx[n_validation..].to_vec();
        validation.sort_unstable();
        train.sort_unstable();
        Ok(Split { train, validation })
    }

    pub fn write_csv<W: Write>(&self, coords: &[f64], dim: usize, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
        header.push("set".into());
        wtr.write_record(&header)?;
        let n = coords.len() / dim;
        for i in 0..n {
            let set = if self.validation.binary_search(&i).is_ok() {
                "validation"
            } else {
                "train"
            };
            let mut row: Vec<String> = coords[i * dim..(i + 1) * dim].iter().map(|&x| sig(x)).collect();
            row.push(set.into());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn gather(coords: &[f64], dim: usize, idx: &[usize]) -> Vec<f64> {
    idx.iter()
        .flat_map(|&i| coords[i * dim..(i + 1) * dim].iter().copied())
        .collect()
}

/// Validation points whose nearest training location is farther than `range`.
pub fn isolated_points(coords: &[f64], dim: usize, split: &Split, range: f64) -> Vec<bool> {
    split
        .validation
        .iter()
        .map(|&v| {
            let p = &coords[v * dim..(v + 1) * dim];
            split
                .train
                .iter()
                .all(|&t| distance(p, &coords[t * dim..(t + 1) * dim]) > range)
        })
        .collect()
}

/// Per-point statistics for one covariance model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mre: f64,
    pub mare: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValPoint {
    pub index: usize,
    pub location: Vec<f64>,
    pub truth: ErrorStats,
    pub ssrf: ErrorStats,
    /// Replicates that entered the averages.
    pub used: usize,
    /// Replicates skipped because the true value was exactly zero.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub replicates: usize,
    pub points: Vec<CrossValPoint>,
}

impl CrossValReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let dim = self.points.first().map_or(0, |p| p.location.len());
        let mut header = vec!["point".to_string()];
        header.extend((1..=dim).map(|k| format!("x{k}")));
        header.extend(["mre_true", "mre_ssrf", "mare_true", "mare_ssrf", "used", "excluded"].map(String::from));
        wtr.write_record(&header)?;
        for (k, p) in self.points.iter().enumerate() {
            let mut row = vec![(k + 1).to_string()];
            row.extend(p.location.iter().map(|&x| sig(x)));
            row.extend([p.truth.mre, p.ssrf.mre, p.truth.mare, p.ssrf.mare].map(sig));
            row.push(p.used.to_string());
            row.push(p.excluded.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Kriging predictions at the validation points of one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicatePredictions {
    pub observed: Vec<f64>,
    pub predicted_true: Vec<f64>,
    pub predicted_ssrf: Vec<f64>,
}

/// Predicts the validation values of one replicate with both covariances.
pub fn predict_replicate(
    coords: &[f64],
    dim: usize,
    split: &Split,
    values: &[f64],
    true_cov: &CovarianceFn,
    ssrf_cov: &CovarianceFn,
) -> Result<ReplicatePredictions> {
    let train_coords = gather(coords, dim, &split.train);
    let train_values: Vec<f64> = split.train.iter().map(|&i| values[i]).collect();
    let run = |cov: &CovarianceFn| -> Result<Vec<f64>> {
        let sys = KrigingSystem::new(&train_coords, dim, cov)?;
        split
            .validation
            .iter()
            .map(|&v| sys.predict(&train_values, &coords[v * dim..(v + 1) * dim], cov))
            .collect()
    };
    Ok(ReplicatePredictions {
        observed: split.validation.iter().map(|&v| values[v]).collect(),
        predicted_true: run(true_cov)?,
        predicted_ssrf: run(ssrf_cov)?,
    })
}

/// MRE and MARE of `(X̂ - X) / X` per validation point over replicates.
pub fn summarize(
    coords: &[f64],
    dim: usize,
    split: &Split,
    replicates: &[ReplicatePredictions],
) -> Result<CrossValReport> {
    let nv = split.validation.len();
    if replicates
        .iter()
        .any(|r| r.observed.len() != nv || r.predicted_true.len() != nv || r.predicted_ssrf.len() != nv)
    {
        return Err(Error::InvalidArgument(
            "replicate predictions do not match the validation set".into(),
        ));
    }
    let points = split
        .validation
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let (mut t, mut s) = (ErrorStats::default(), ErrorStats::default());
            let (mut used, mut excluded) = (0usize, 0usize);
            for r in replicates {
                let x = r.observed[j];
                if x == 0.0 {
                    excluded += 1;
                    continue;
                }
                let et = (r.predicted_true[j] - x) / x;
                let es = (r.predicted_ssrf[j] - x) / x;
                t.mre += et;
                t.mare += et.abs();
                s.mre += es;
                s.mare += es.abs();
                used += 1;
            }
            if used > 0 {
                let m = used as f64;
                for st in [&mut t, &mut s] {
                    st.mre /= m;
                    st.mare /= m;
                }
            }
            CrossValPoint {
                index: v,
                location: coords[v * dim..(v + 1) * dim].to_vec(),
                truth: t,
                ssrf: s,
                used,
                excluded,
            }
        })
        .collect();
    Ok(CrossValReport {
        replicates: replicates.len(),
        points,
    })
}

/// Cross-validation over replicated fields on a fixed layout. `ssrf_covs`
/// holds one covariance per replicate, or a single shared one.
pub fn cross_validate(
    coords: &[f64],
    dim: usize,
    split: &Split,
    replicates: &[Vec<f64>],
    true_cov: &CovarianceFn,
    ssrf_covs: &[CovarianceFn],
    exec: Execution,
) -> Result<CrossValReport> {
    if ssrf_covs.len() != 1 && ssrf_covs.len() != replicates.len() {
        return Err(Error::InvalidArgument(format!(
            "{} SSRF covariances for {} replicates",
            ssrf_covs.len(),
            replicates.len()
        )));
    }
    let preds: Result<Vec<ReplicatePredictions>> = map_indexed(exec, replicates.len(), |m| {
        let ssrf = &ssrf_covs[if ssrf_covs.len() == 1 { 0 } else { m }];
        predict_replicate(coords, dim, split, &replicates[m], true_cov, ssrf)
    })
    .into_iter()
    .collect();
    summarize(coords, dim, split, &preds?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{replicate_rng, sample_locations, CovarianceModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn exp_cov(range: f64) -> CovarianceFn {
        CovarianceFn::Analytic(CovarianceModel::Exponential { sigma2: 1.0, range })
    }

    #[test]
    fn lu_solves_pivoting_system() {
        let lu = Lu::new(3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]).unwrap();
        let x = lu.solve(&[3.0, 2.0, 4.0]);
        for (a, b) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
        assert!(matches!(
            Lu::new(2, vec![1.0, 2.0, 2.0, 4.0]),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn weight_examples() {
        let cov = exp_cov(1.0);
        let (w, _) = kriging_weights(&[0.3, 0.4], 2, &[2.0, 2.0], &cov).unwrap();
        assert_eq!(w.len(), 1);
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-14);

        let coords = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 2.0];
        let (w, _) = kriging_weights(&coords, 2, &[1.0, 0.0], &cov).unwrap();
        for (k, wk) in w.iter().enumerate() {
            assert!((wk - if k == 1 { 1.0 } else { 0.0 }).abs() < 1e-10);
        }

        let (w, _) = kriging_weights(&[-1.0, 0.0, 1.0, 0.0], 2, &[0.0, 0.5], &cov).unwrap();
        assert_relative_eq!(w[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(w[1], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn duplicate_training_locations_are_named() {
        let err = kriging_weights(&[0.0, 0.0, 1.0, 1.0, 0.0, 0.0], 2, &[0.5, 0.5], &exp_cov(1.0)).unwrap_err();
        match err {
            Error::SingularSystem(msg) => assert!(msg.contains("0 and 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn predict_examples() {
        let mut rng = replicate_rng(2, 0);
        let coords = sample_locations(15, &[0.0, 0.0], &[3.0, 3.0], &mut rng);
        let cov = exp_cov(0.7);
        let flat = SampleData::new(2, coords.clone(), vec![5.5; 15]).unwrap();
        for p in predict(&flat, &[1.0, 1.0, 2.9, 0.1], &cov).unwrap() {
            assert_relative_eq!(p, 5.5, max_relative = 1e-12);
        }
        let values: Vec<f64> = (0..15).map(|k| (k as f64).sin()).collect();
        let train = SampleData::new(2, coords.clone(), values.clone()).unwrap();
        let at_train = predict(&train, &coords[6..8], &cov).unwrap();
        assert_relative_eq!(at_train[0], values[3], max_relative = 1e-10);

        // covariances to the target vanish: the generalized least-squares mean
        let c = CovarianceFn::Analytic(CovarianceModel::Exponential {
            sigma2: 1.0,
            range: 1e-3,
        });
        let far = predict(&train, &[1e3, 1e3], &c).unwrap()[0];
        let mean = values.iter().sum::<f64>() / 15.0;
        assert_relative_eq!(far, mean, max_relative = 1e-10);
    }

    #[test]
    fn summary_examples() {
        let split = Split {
            train: vec![0, 1],
            validation: vec![2, 3],
        };
        let coords = [0.0, 1.0, 2.0, 3.0];
        let perfect = ReplicatePredictions {
            observed: vec![1.0, 2.0],
            predicted_true: vec![1.0, 2.0],
            predicted_ssrf: vec![1.0, 2.0],
        };
        let r = summarize(&coords, 1, &split, &[perfect.clone(), perfect]).unwrap();
        assert!(r.points.iter().all(|p| p.truth.mre == 0.0 && p.ssrf.mare == 0.0));
        let zero = ReplicatePredictions {
            observed: vec![0.0, 2.0],
            predicted_true: vec![1.0, 3.0],
            predicted_ssrf: vec![1.0, 1.0],
        };
        let r = summarize(&coords, 1, &split, &[zero]).unwrap();
        assert_eq!((r.points[0].used, r.points[0].excluded), (0, 1));
        assert_relative_eq!(r.points[1].truth.mre, 0.5);
        assert_relative_eq!(r.points[1].ssrf.mre, -0.5);
        assert_relative_eq!(r.points[1].ssrf.mare, 0.5);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("point,x1,mre_true,mre_ssrf,mare_true,mare_ssrf"));
    }

    #[test]
    fn split_is_a_partition() {
        let s = Split::random(110, 10, &mut replicate_rng(1, 0)).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..110).collect::<Vec<_>>());
        assert!(Split::random(5, 5, &mut replicate_rng(1, 0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn weights_sum_to_one_and_shift_equivariance(seed in 0u64..500, shift in -50.0f64..50.0, tx in 0.0f64..4.0, ty in 0.0f64..4.0) {
            let coords = sample_locations(25, &[0.0, 0.0], &[4.0, 4.0], &mut replicate_rng(seed, 0));
            let cov = exp_cov(1.0);
            let (w, _) = kriging_weights(&coords, 2, &[tx, ty], &cov).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            let values: Vec<f64> = (0..25).map(|k| (k as f64 * 0.37).cos()).collect();
            let base = predict(&SampleData::new(2, coords.clone(), values.clone()).unwrap(), &[tx, ty], &cov).unwrap()[0];
            let moved = predict(&SampleData::new(2, coords, values.iter().map(|v| v + shift).collect()).unwrap(), &[tx, ty], &cov).unwrap()[0];
            prop_assert!((moved - base - shift).abs() <= 1e-9 * (1.0 + shift.abs()));
        }

        #[test]
        fn mare_bounds_mre(seed in 0u64..500) {
            let mut rng = replicate_rng(seed, 1);
            let split = Split { train: vec![0], validation: vec![1, 2] };
            let reps: Vec<ReplicatePredictions> = (0..10).map(|_| ReplicatePredictions {
                observed: vec![1.0 + rng.random::<f64>(), -1.0 - rng.random::<f64>()],
                predicted_true: vec![rng.random::<f64>(), rng.random::<f64>()],
                predicted_ssrf: vec![rng.random::<f64>(), rng.random::<f64>()],
            }).collect();
            let r = summarize(&[0.0, 1.0, 2.0], 1, &split, &reps).unwrap();
            for p in &r.points {
                prop_assert!(p.truth.mare >= p.truth.mre.abs() && p.ssrf.mare >= p.ssrf.mre.abs());
            }
        }
    }
}
