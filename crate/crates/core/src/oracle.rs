//! Verification machinery: lossless-projection checks,
//! Monte-Carlo estimator statistics, msign backend comparisons and
//! finite-difference gradients.
//!
//! Reference quantities here are computed from `linalg` primitives and
//! closed forms only; the estimators are sampled as black boxes.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{rge_full, subspace_rge, EstimatorConfig, EstimatorError};
use crate::linalg::{
    leading_left_singular_vectors, msign_ns_with, msign_svd, orthonormalize_columns,
    sample_projection, LinalgError, Matrix, NsSchedule, Projection, DEFAULT_RANK_TOL,
};
use crate::objectives::Objective;
use crate::params::ParamSpace;
use crate::rng::{derive_seed, gaussian_matrix, rng_from_seed, stream};

/// Worst-entry tolerance for the lossless-projection identity.
pub const PROP1_TOL: f64 = 1e-8;

/// Smallest sample count for which a variance ratio is reported.
pub const MIN_VARIANCE_SAMPLES: usize = 1000;

const CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Where the projection in [`check_prop1`] comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionSource {
    /// Top-k left singular vectors of `G`.
    LeadingSingular,
    /// A random column-orthonormal draw (negative control).
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Report {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    /// Worst `|P msign(PᵀG) − msign(G)|` entry over all trials.
    pub max_entry_error: f64,
    /// Worst `|PPᵀG − G|` entry over all trials.
    pub max_identity_error: f64,
    pub pass: bool,
}

/// Builds rank-`k` matrices `G = AB` and compares `P msign(PᵀG)` with
/// `msign(G)` entry by entry.
pub fn check_prop1(
    m: usize,
    n: usize,
    k: usize,
    trials: usize,
    seed: u64,
    source: ProjectionSource,
) -> Result<Prop1Report, OracleError> {
    if k == 0 || k > m.min(n) || trials == 0 {
        return Err(OracleError::Invalid(format!(
            "need 1 <= k <= min(m, n) and trials >= 1, got m={m} n={n} k={k} trials={trials}"
        )));
    }
    let mut max_entry_error: f64 = 0.0;
    let mut max_identity_error: f64 = 0.0;
    for trial in 0..trials as u64 {
        let a = gaussian_matrix(m, k, derive_seed(seed, &[stream::SAMPLE, trial, 0]));
        let b = gaussian_matrix(k, n, derive_seed(seed, &[stream::SAMPLE, trial, 1]));
        let g = a.matmul(&b);
        let p = match source {
            ProjectionSource::LeadingSingular => leading_left_singular_vectors(&g, k)?,
            ProjectionSource::Random => {
                sample_projection(m, k, derive_seed(seed, &[stream::PROJECTION, trial]))?
            }
        };
        let pm = p.matrix();
        let lhs = pm.matmul(&msign_svd(&pm.tr_matmul(&g), DEFAULT_RANK_TOL)?);
        let rhs = msign_svd(&g, DEFAULT_RANK_TOL)?;
        max_entry_error = max_entry_error.max(lhs.max_abs_diff(&rhs));
        max_identity_error = max_identity_error.max(pm.matmul(&pm.tr_matmul(&g)).max_abs_diff(&g));
    }
    Ok(Prop1Report {
        m,
        n,
        k,
        trials,
        max_entry_error,
        max_identity_error,
        pass: max_entry_error <= PROP1_TOL,
    })
}

/// An estimator sampled by the Monte-Carlo routines.
#[derive(Debug, Clone)]
pub enum EstimatorSpec {
    Full {
        cfg: EstimatorConfig,
    },
    /// Lifted subspace estimate with a fixed projection per block.
    Subspace {
        cfg: EstimatorConfig,
        projections: Vec<Projection>,
    },
}

impl EstimatorSpec {
    pub fn name(&self) -> String {
        match self {
            EstimatorSpec::Full { cfg } => {
                format!("rge-full(nq={}, {})", cfg.n_queries, cfg.scheme.name())
            }
            EstimatorSpec::Subspace { cfg, projections } => format!(
                "subspace-rge(r={}, nq={})",
                projections.first().map_or(0, |p| p.rank()),
                cfg.n_queries
            ),
        }
    }

    /// One estimate with the given perturbation seed.
    pub fn sample(
        &self,
        obj: &dyn Objective,
        x: &ParamSpace,
        seed: u64,
    ) -> Result<ParamSpace, OracleError> {
        Ok(match self {
            EstimatorSpec::Full { cfg } => rge_full(obj, x, cfg, seed)?.grad,
            EstimatorSpec::Subspace { cfg, projections } => {
                let ps: Vec<Option<&Projection>> = projections.iter().map(Some).collect();
                subspace_rge(obj, x, &ps, cfg, seed)?.grad
            }
        })
    }
}

/// Per-entry running moments (Welford / Chan merge).
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1.0;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let d = v - *mean;
            *mean += d / self.count;
            *m2 += d * (v - *mean);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let n = self.count + other.count;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.m2[i] += other.m2[i] + d * d * self.count * other.count / n;
            self.mean[i] += d * other.count / n;
        }
        self.count = n;
    }

    /// Unbiased per-entry variance averaged over entries.
    fn mean_variance(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        self.m2.iter().sum::<f64>() / (self.count - 1.0) / self.m2.len() as f64
    }
}

/// Samples `spec` `n_samples` times (sample `i` uses `derive_seed(seed, [SAMPLE, i])`)
/// in fixed-size chunks on the rayon pool, merging chunks in index order.
fn sample_moments(
    spec: &EstimatorSpec,
    obj: &dyn Objective,
    x: &ParamSpace,
    n_samples: usize,
    seed: u64,
) -> Result<Moments, OracleError> {
    let dim = x.num_params();
    let chunks: Vec<Moments> = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| -> Result<Moments, OracleError> {
            let mut mom = Moments::new(dim);
            for i in c * CHUNK..((c + 1) * CHUNK).min(n_samples) {
                let g = spec.sample(obj, x, derive_seed(seed, &[stream::SAMPLE, i as u64]))?;
                mom.push(&g.to_flat());
            }
            Ok(mom)
        })
        .collect::<Result<_, _>>()?;
    let mut total = Moments::new(dim);
    for c in &chunks {
        total.merge(c);
    }
    Ok(total)
}

/// Sample mean of `n_samples` estimates.
pub fn mean_estimate(
    spec: &EstimatorSpec,
    obj: &dyn Objective,
    x: &ParamSpace,
    n_samples: usize,
    seed: u64,
) -> Result<ParamSpace, OracleError> {
    if n_samples == 0 {
        return Err(OracleError::Invalid("n_samples must be positive".into()));
    }
    let mom = sample_moments(spec, obj, x, n_samples, seed)?;
    let mut out = x.zeros_like();
    for (i, v) in mom.mean.iter().enumerate() {
        out.flat_set(i, *v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub estimator: String,
    pub reference: String,
    /// Per-entry variance of `estimator`, averaged over entries.
    pub variance: f64,
    pub reference_variance: f64,
    /// `reference_variance / variance`; NaN when both are zero.
    pub ratio: f64,
    pub n_samples: usize,
}

/// Empirical per-entry variances of two estimators at the same point and
/// their ratio (reference over estimator).
pub fn measure_variance(
    estimator: &EstimatorSpec,
    reference: &EstimatorSpec,
    obj: &dyn Objective,
    x: &ParamSpace,
    n_samples: usize,
    seed: u64,
) -> Result<VarianceReport, OracleError> {
    if n_samples < MIN_VARIANCE_SAMPLES {
        return Err(OracleError::Invalid(format!(
            "variance ratios need at least {MIN_VARIANCE_SAMPLES} samples, got {n_samples}"
        )));
    }
    let v_est =
        sample_moments(estimator, obj, x, n_samples, derive_seed(seed, &[0]))?.mean_variance();
    let v_ref =
        sample_moments(reference, obj, x, n_samples, derive_seed(seed, &[1]))?.mean_variance();
    Ok(VarianceReport {
        estimator: estimator.name(),
        reference: reference.name(),
        variance: v_est,
        reference_variance: v_ref,
        ratio: v_ref / v_est,
        n_samples,
    })
}

/// Root-mean-square Frobenius error of the sample mean against `target`,
/// for each sample size, over `replicates` independent replicates.
pub fn mean_error_curve(
    spec: &EstimatorSpec,
    obj: &dyn Objective,
    x: &ParamSpace,
    target: &ParamSpace,
    sizes: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>, OracleError> {
    sizes
        .iter()
        .map(|&n| {
            let errs: Vec<f64> = (0..replicates as u64)
                .into_par_iter()
                .map(|rep| -> Result<f64, OracleError> {
                    let s = derive_seed(seed, &[n as u64, rep]);
                    let mut mom = Moments::new(x.num_params());
                    for i in 0..n {
                        mom.push(&spec.sample(obj, x, derive_seed(s, &[i as u64]))?.to_flat());
                    }
                    let t = target.to_flat();
                    Ok(mom.mean.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum())
                })
                .collect::<Result<_, _>>()?;
            Ok((n, (errs.iter().sum::<f64>() / replicates as f64).sqrt()))
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| ((x as f64).ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// A condition-number bucket `[lo, hi)` and the NS-vs-SVD errors seen in it.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendRow {
    pub condition_lo: f64,
    pub condition_hi: f64,
    pub trials: usize,
    pub median_error: f64,
    pub max_error: f64,
}

/// Relative Frobenius error of `msign_ns` against `msign_svd` on random
/// `m × n` matrices whose condition number is drawn log-uniformly from each
/// bucket (singular values spaced geometrically between 1 and 1/κ).
pub fn compare_msign_backends(
    shape: (usize, usize),
    buckets: &[(f64, f64)],
    trials: usize,
    seed: u64,
    iterations: usize,
    schedule: NsSchedule,
) -> Result<Vec<BackendRow>, OracleError> {
    let (m, n) = shape;
    let k = m.min(n);
    if k == 0 || trials == 0 {
        return Err(OracleError::Invalid(
            "shape and trials must be positive".into(),
        ));
    }
    buckets
        .iter()
        .enumerate()
        .map(|(bi, &(lo, hi))| {
            if !(lo >= 1.0 && hi > lo) {
                return Err(OracleError::Invalid(format!("bad bucket [{lo}, {hi})")));
            }
            let mut errs = Vec::with_capacity(trials);
            for t in 0..trials as u64 {
                let s = |tag: u64| derive_seed(seed, &[bi as u64, t, tag]);
                let u = orthonormalize_columns(&gaussian_matrix(m, k, s(0)))?;
                let v = orthonormalize_columns(&gaussian_matrix(n, k, s(1)))?;
                let unit: f64 = rng_from_seed(s(2)).random();
                let kappa = (lo.ln() + unit * (hi.ln() - lo.ln())).exp();
                let sigma: Vec<f64> = (0..k)
                    .map(|i| {
                        if k == 1 {
                            1.0
                        } else {
                            kappa.powf(-(i as f64) / (k - 1) as f64)
                        }
                    })
                    .collect();
                let g = u
                    .matmul(&Matrix::from_diagonal(&sigma)?)
                    .matmul(&v.transpose());
                let exact = msign_svd(&g, DEFAULT_RANK_TOL)?;
                let approx = msign_ns_with(&g, iterations, schedule)?;
                errs.push(approx.sub(&exact).frobenius_norm() / exact.frobenius_norm());
            }
            errs.sort_by(f64::total_cmp);
            let median = if trials % 2 == 1 {
                errs[trials / 2]
            } else {
                0.5 * (errs[trials / 2 - 1] + errs[trials / 2])
            };
            Ok(BackendRow {
                condition_lo: lo,
                condition_hi: hi,
                trials,
                median_error: median,
                max_error: *errs.last().unwrap(),
            })
        })
        .collect()
}

/// Central-difference gradient of every coordinate through the unmetered
/// loss channel. `mu` must lie in `[1e-8, 1e-4]`.
pub fn finite_diff_gradient(
    obj: &dyn Objective,
    x: &ParamSpace,
    mu: f64,
) -> Result<ParamSpace, OracleError> {
    let idx: Vec<usize> = (0..x.num_params()).collect();
    let vals = finite_diff_coordinates(obj, x, mu, &idx)?;
    let mut g = x.zeros_like();
    for (i, v) in idx.into_iter().zip(vals) {
        g.flat_set(i, v);
    }
    Ok(g)
}

/// Central differences at selected flat coordinates.
pub fn finite_diff_coordinates(
    obj: &dyn Objective,
    x: &ParamSpace,
    mu: f64,
    coordinates: &[usize],
) -> Result<Vec<f64>, OracleError> {
    if !(1e-8..=1e-4).contains(&mu) {
        return Err(OracleError::Invalid(format!(
            "finite-difference mu {mu} outside [1e-8, 1e-4]"
        )));
    }
    Ok(coordinates
        .par_iter()
        .map(|&i| {
            let mut xp = x.clone();
            let v = x.flat_get(i);
            xp.flat_set(i, v + mu);
            let fp = obj.loss(&xp);
            xp.flat_set(i, v - mu);
            let fm = obj.loss(&xp);
            (fp - fm) / (2.0 * mu)
        })
        .collect())
}
