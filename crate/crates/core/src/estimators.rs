//! Zeroth-order gradient estimators.
//!
//! All estimators share one engine: each block of the parameter space is
//! given a [`BlockPerturbation`] describing how its random direction is
//! formed, then the Nq directional finite differences are evaluated and
//! accumulated. Random factors are regenerated from
//! `derive_seed(seed, [query, block])` and never stored between calls.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, Projection};
use crate::objectives::Objective;
use crate::params::ParamSpace;
use crate::rng;

/// Smallest accepted smoothing parameter.
pub const MIN_MU: f64 = 1e-12;

pub const DEFAULT_MU: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffScheme {
    #[default]
    Forward,
    Central,
}

impl DiffScheme {
    pub fn name(self) -> &'static str {
        match self {
            DiffScheme::Forward => "forward",
            DiffScheme::Central => "central",
        }
    }
}

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid estimator config: {0}")]
    InvalidConfig(String),
    #[error("non-finite function value {value} at query {query} (perturbation seed {seed})")]
    NonFinite { value: f64, query: usize, seed: u64 },
    #[error("block {block}: perturbation factor has shape {got:?}, block needs {expected}")]
    Shape {
        block: usize,
        expected: String,
        got: (usize, usize),
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    pub mu: f64,
    pub n_queries: usize,
    pub scheme: DiffScheme,
    /// Evaluate the Nq perturbed points on the rayon pool. Results are
    /// bit-identical to sequential evaluation.
    pub parallel: bool,
}

impl EstimatorConfig {
    pub fn new(mu: f64, n_queries: usize, scheme: DiffScheme) -> Result<Self, EstimatorError> {
        let cfg = Self {
            mu,
            n_queries,
            scheme,
            parallel: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn forward(mu: f64, n_queries: usize) -> Result<Self, EstimatorError> {
        Self::new(mu, n_queries, DiffScheme::Forward)
    }

    pub fn central(mu: f64) -> Result<Self, EstimatorError> {
        Self::new(mu, 1, DiffScheme::Central)
    }

    pub fn parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.mu >= MIN_MU) || !self.mu.is_finite() {
            return Err(EstimatorError::InvalidConfig(format!(
                "mu must be finite and at least {MIN_MU:e}, got {}",
                self.mu
            )));
        }
        if self.n_queries == 0 {
            return Err(EstimatorError::InvalidConfig(
                "n_queries must be positive".into(),
            ));
        }
        if self.scheme == DiffScheme::Central && self.n_queries != 1 {
            return Err(EstimatorError::InvalidConfig(format!(
                "the central scheme requires n_queries = 1, got {}",
                self.n_queries
            )));
        }
        Ok(())
    }

    /// Objective evaluations consumed by one estimate.
    pub fn queries_per_call(&self) -> u64 {
        let nq = self.n_queries as u64;
        match self.scheme {
            DiffScheme::Forward => nq + 1,
            DiffScheme::Central => 2 * nq,
        }
    }
}

/// How the random direction of one block is formed.
#[derive(Debug, Clone, Copy)]
pub enum BlockPerturbation<'a> {
    /// Dense Gaussian `Ψ ∈ R^{m×n}`.
    Full,
    /// `P Ψ` with `P ∈ R^{m×r}` column-orthonormal and Gaussian `Ψ ∈ R^{r×n}`.
    Subspace(&'a Matrix),
    /// `A B` with a fixed `A ∈ R^{m×r}` and Gaussian `B ∈ R^{r×n}` drawn per query.
    LowRank(&'a Matrix),
    /// `A B` with both factors supplied.
    Fixed(&'a Matrix, &'a Matrix),
    /// The block is not perturbed and gets a zero estimate.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    /// Estimate in the original parameter space (lifted for subspace blocks).
    pub grad: ParamSpace,
    /// Per block, the reduced-space estimate `ĝ_Z` for subspace blocks.
    pub reduced: Vec<Option<Matrix>>,
    /// The Nq scalar finite-difference coefficients, in query order.
    pub coefficients: Vec<f64>,
    pub queries_used: u64,
    pub perturbation_seed: u64,
}

impl GradEstimate {
    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|&s| s == 0.0)
    }
}

/// The random factor for (query, block), regenerated from the seed.
fn draw_factor(
    pert: &BlockPerturbation<'_>,
    shape: (usize, usize),
    seed: u64,
    query: usize,
    block: usize,
) -> Option<Matrix> {
    let s = rng::derive_seed(seed, &[query as u64, block as u64]);
    match pert {
        BlockPerturbation::Full => Some(rng::gaussian_matrix(shape.0, shape.1, s)),
        BlockPerturbation::Subspace(p) | BlockPerturbation::LowRank(p) => {
            Some(rng::gaussian_matrix(p.cols(), shape.1, s))
        }
        BlockPerturbation::Fixed(_, b) => Some((*b).clone()),
        BlockPerturbation::Frozen => None,
    }
}

/// The ambient direction a factor produces.
fn direction(pert: &BlockPerturbation<'_>, factor: &Matrix) -> Matrix {
    match pert {
        BlockPerturbation::Full => factor.clone(),
        BlockPerturbation::Subspace(p) | BlockPerturbation::LowRank(p) => p.matmul(factor),
        BlockPerturbation::Fixed(a, _) => a.matmul(factor),
        BlockPerturbation::Frozen => unreachable!("frozen blocks have no direction"),
    }
}

fn check_shapes(x: &ParamSpace, perts: &[BlockPerturbation<'_>]) -> Result<(), EstimatorError> {
    if perts.len() != x.len() {
        return Err(EstimatorError::InvalidConfig(format!(
            "{} block perturbations for {} blocks",
            perts.len(),
            x.len()
        )));
    }
    for (b, pert) in perts.iter().enumerate() {
        let (m, n) = x.value(b).shape();
        let bad = |got: (usize, usize), expected: String| EstimatorError::Shape {
            block: b,
            expected,
            got,
        };
        match pert {
            BlockPerturbation::Subspace(p) | BlockPerturbation::LowRank(p) => {
                if p.rows() != m {
                    return Err(bad(p.shape(), format!("{m} x r")));
                }
            }
            BlockPerturbation::Fixed(a, bm) => {
                if a.rows() != m {
                    return Err(bad(a.shape(), format!("{m} x r")));
                }
                if bm.cols() != n || bm.rows() != a.cols() {
                    return Err(bad(bm.shape(), format!("{} x {n}", a.cols())));
                }
            }
            BlockPerturbation::Full | BlockPerturbation::Frozen => {}
        }
    }
    Ok(())
}

fn perturbed(
    x: &ParamSpace,
    perts: &[BlockPerturbation<'_>],
    seed: u64,
    query: usize,
    step: f64,
) -> ParamSpace {
    let mut out = x.clone();
    for (b, pert) in perts.iter().enumerate() {
        if let Some(factor) = draw_factor(pert, x.value(b).shape(), seed, query, b) {
            out.value_mut(b).axpy(step, &direction(pert, &factor));
        }
    }
    out
}

fn finite(value: f64, query: usize, seed: u64) -> Result<f64, EstimatorError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(EstimatorError::NonFinite {
            value,
            query,
            seed: rng::derive_seed(seed, &[query as u64]),
        })
    }
}

/// The general estimator.
///
/// Forward: `(1/Nq) Σ_i [(f(X + μ D_i) − f(X)) / μ] D_i` with one shared base
/// evaluation. Central (Nq = 1): `[(f(X + μD) − f(X − μD)) / 2μ] D`.
/// For subspace blocks, `ĝ_Z = (1/Nq) Σ_i s_i Ψ_i` is returned in `reduced`
/// and the lifted `P ĝ_Z` in `grad`.
pub fn estimate(
    obj: &dyn Objective,
    x: &ParamSpace,
    perts: &[BlockPerturbation<'_>],
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<GradEstimate, EstimatorError> {
    cfg.validate()?;
    check_shapes(x, perts)?;
    let mu = cfg.mu;
    let nq = cfg.n_queries;

    let base = match cfg.scheme {
        DiffScheme::Forward => Some(finite(obj.evaluate(x), usize::MAX, seed)?),
        DiffScheme::Central => None,
    };
    let coefficient = |i: usize| -> Result<f64, EstimatorError> {
        let plus = finite(obj.evaluate(&perturbed(x, perts, seed, i, mu)), i, seed)?;
        match base {
            Some(f0) => Ok((plus - f0) / mu),
            None => {
                let minus = finite(obj.evaluate(&perturbed(x, perts, seed, i, -mu)), i, seed)?;
                Ok((plus - minus) / (2.0 * mu))
            }
        }
    };
    let coefficients: Vec<f64> = if cfg.parallel && nq > 1 {
        (0..nq)
            .into_par_iter()
            .map(coefficient)
            .collect::<Result<_, _>>()?
    } else {
        (0..nq).map(coefficient).collect::<Result<_, _>>()?
    };

    // Accumulate in query order so the result does not depend on scheduling.
    let mut grad = x.zeros_like();
    let mut reduced: Vec<Option<Matrix>> = perts
        .iter()
        .enumerate()
        .map(|(b, p)| match p {
            BlockPerturbation::Subspace(proj) => {
                Some(Matrix::zeros(proj.cols(), x.value(b).cols()))
            }
            _ => None,
        })
        .collect();
    let weight = 1.0 / nq as f64;
    for (i, &s) in coefficients.iter().enumerate() {
        for (b, pert) in perts.iter().enumerate() {
            let Some(factor) = draw_factor(pert, x.value(b).shape(), seed, i, b) else {
                continue;
            };
            match pert {
                BlockPerturbation::Subspace(_) => {
                    reduced[b].as_mut().unwrap().axpy(weight * s, &factor);
                }
                _ => grad
                    .value_mut(b)
                    .axpy(weight * s, &direction(pert, &factor)),
            }
        }
    }
    for (b, pert) in perts.iter().enumerate() {
        if let (BlockPerturbation::Subspace(p), Some(z)) = (pert, &reduced[b]) {
            *grad.value_mut(b) = p.matmul(z);
        }
    }

    Ok(GradEstimate {
        grad,
        reduced,
        coefficients,
        queries_used: cfg.queries_per_call(),
        perturbation_seed: seed,
    })
}

/// Full-space RGE over every block.
pub fn rge_full(
    obj: &dyn Objective,
    x: &ParamSpace,
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<GradEstimate, EstimatorError> {
    let perts = vec![BlockPerturbation::Full; x.len()];
    estimate(obj, x, &perts, cfg, seed)
}

/// Subspace RGE: blocks with a projection are perturbed inside `col(P)`,
/// blocks given `None` fall back to full-space perturbations. All blocks
/// are perturbed jointly per query. Forward scheme only.
pub fn subspace_rge(
    obj: &dyn Objective,
    x: &ParamSpace,
    projections: &[Option<&Projection>],
    cfg: &EstimatorConfig,
    seed: u64,
) -> Result<GradEstimate, EstimatorError> {
    if cfg.scheme != DiffScheme::Forward {
        return Err(EstimatorError::InvalidConfig(
            "the subspace estimator is defined for the forward scheme only".into(),
        ));
    }
    let perts: Vec<BlockPerturbation<'_>> = projections
        .iter()
        .map(|p| match p {
            Some(p) => BlockPerturbation::Subspace(p.matrix()),
            None => BlockPerturbation::Full,
        })
        .collect();
    estimate(obj, x, &perts, cfg, seed)
}

/// LOZO's low-rank estimator for one block with explicit factors:
/// `[(f(X + μAB) − f(X − μAB)) / 2μ] AB`. Other blocks are left unperturbed.
pub fn lge_lozo(
    obj: &dyn Objective,
    x: &ParamSpace,
    block: usize,
    a: &Matrix,
    b: &Matrix,
    mu: f64,
) -> Result<GradEstimate, EstimatorError> {
    if block >= x.len() {
        return Err(EstimatorError::InvalidConfig(format!(
            "block index {block} out of range for {} blocks",
            x.len()
        )));
    }
    let cfg = EstimatorConfig::central(mu)?;
    let perts: Vec<BlockPerturbation<'_>> = (0..x.len())
        .map(|i| {
            if i == block {
                BlockPerturbation::Fixed(a, b)
            } else {
                BlockPerturbation::Frozen
            }
        })
        .collect();
    estimate(obj, x, &perts, &cfg, 0)
}
