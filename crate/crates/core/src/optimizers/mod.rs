//! Zeroth-order step rules (MeZO, Subspace-MeZO, LOZO, ZO-Muon), their
//! shared state machine, first-order reference steps and the run loop.

mod config;
mod first_order;
mod run;
mod state;

use thiserror::Error;

use crate::estimators::{estimate, BlockPerturbation, EstimatorError, GradEstimate};
use crate::linalg::{msign_ns_with, msign_svd, LinalgError, Matrix, DEFAULT_RANK_TOL};
use crate::objectives::Objective;
use crate::params::{BlockKind, ParamSpace};
use crate::rng::{derive_seed, stream};

pub use config::{
    MsignBackend, OptimizerConfig, OptimizerKind, ProjectionStrategy, DEFAULT_SKETCH_BETA,
};
pub use first_order::{
    fo_lowrank_muon_direction, fo_muon_direction, step_fo_lowrank_muon, step_fo_muon, step_fo_sgd,
};
pub use run::{run, RunFailure, RunOutput};
pub use state::{resample_projection, OptimizerState};

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("msign failed on block {block}: {source}")]
    Msign {
        block: String,
        #[source]
        source: LinalgError,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("objective {0} has no analytic gradient")]
    NoGradient(String),
}

/// What one optimizer step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Index of the step that was taken (0-based).
    pub step: u64,
    pub queries_used: u64,
    /// `X_{t+1} − X_t`.
    pub update: ParamSpace,
    pub estimate: GradEstimate,
}

/// Applies `msign` with the configured backend.
pub fn msign(g: &Matrix, cfg: &OptimizerConfig) -> Result<Matrix, LinalgError> {
    match cfg.msign_backend {
        MsignBackend::Svd => msign_svd(g, DEFAULT_RANK_TOL),
        MsignBackend::Ns => msign_ns_with(g, cfg.ns_iterations, cfg.ns_schedule),
    }
}

/// Advances `x` by one step of `kind`, resampling projections first when
/// the schedule calls for it.
pub fn step(
    kind: OptimizerKind,
    obj: &dyn Objective,
    x: &mut ParamSpace,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome, OptimizerError> {
    let t = state.step;
    if state.resample_due(cfg.resample_interval) {
        resample_projection(state, cfg, &x.shapes())?;
    }
    let est_cfg = cfg.estimator_config(kind)?;
    let seed = derive_seed(state.rng_root_seed, &[stream::PERTURBATION, t]);

    let perts: Vec<BlockPerturbation<'_>> = x
        .blocks()
        .iter()
        .enumerate()
        .map(|(b, block)| match (kind, block.kind) {
            (_, BlockKind::Vector) | (OptimizerKind::Mezo, _) => BlockPerturbation::Full,
            (OptimizerKind::Lozo, BlockKind::Matrix) => {
                BlockPerturbation::LowRank(state.left_factors[b].as_ref().expect("left factor"))
            }
            (_, BlockKind::Matrix) => BlockPerturbation::Subspace(
                state.projections[b].as_ref().expect("projection").matrix(),
            ),
        })
        .collect();
    let est = estimate(obj, x, &perts, &est_cfg, seed)?;

    let mut update = x.zeros_like();
    for b in 0..x.len() {
        let direction = match (&perts[b], kind) {
            (BlockPerturbation::Subspace(p), OptimizerKind::ZoMuon) => {
                let z = est.reduced[b].as_ref().expect("reduced estimate");
                let o = msign(z, cfg).map_err(|source| OptimizerError::Msign {
                    block: x.block(b).name.clone(),
                    source,
                })?;
                p.matmul(&o)
            }
            _ => est.grad.value(b).clone(),
        };
        update.value_mut(b).axpy(-cfg.learning_rate, &direction);
    }
    x.axpy(1.0, &update);

    if cfg.projection_strategy == ProjectionStrategy::Sketching {
        state.accumulate_sketch(&est.grad, cfg.sketch_momentum_beta);
    }
    state.step += 1;
    Ok(StepOutcome {
        step: t,
        queries_used: est.queries_used,
        update,
        estimate: est,
    })
}

/// `X ← X − η ĝ` with the full-space estimator (central at Nq = 1 by default).
pub fn step_mezo(
    obj: &dyn Objective,
    x: &mut ParamSpace,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome, OptimizerError> {
    step(OptimizerKind::Mezo, obj, x, cfg, state)
}

/// `X ← X − η P ĝ_Z` with the subspace estimator.
pub fn step_subspace_mezo(
    obj: &dyn Objective,
    x: &mut ParamSpace,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome, OptimizerError> {
    step(OptimizerKind::SubspaceMezo, obj, x, cfg, state)
}

/// `X ← X − η ĝ` with the low-rank `AB` estimator.
pub fn step_lozo(
    obj: &dyn Objective,
    x: &mut ParamSpace,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome, OptimizerError> {
    step(OptimizerKind::Lozo, obj, x, cfg, state)
}

/// `X ← X − η P msign(ĝ_Z)` on matrix blocks, plain ZO-SGD on vector blocks.
pub fn step_zo_muon(
    obj: &dyn Objective,
    x: &mut ParamSpace,
    cfg: &OptimizerConfig,
    state: &mut OptimizerState,
) -> Result<StepOutcome, OptimizerError> {
    step(OptimizerKind::ZoMuon, obj, x, cfg, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::singular_values;
    use crate::objectives::FnObjective;
    use crate::rng::gaussian_matrix;

    fn quad(m: usize, n: usize) -> (FnObjective, ParamSpace) {
        let x0 = ParamSpace::single(gaussian_matrix(m, n, 1));
        let target = ParamSpace::single(gaussian_matrix(m, n, 2));
        (FnObjective::isotropic_quadratic(x0.clone(), target), x0)
    }

    #[test]
    fn zo_muon_update_is_orthogonal_inside_subspace() {
        let (f, mut x) = quad(12, 10);
        let cfg = OptimizerConfig::defaults(OptimizerKind::ZoMuon)
            .rank(4)
            .learning_rate(0.1);
        let mut state = OptimizerState::new(OptimizerKind::ZoMuon, &cfg, &x, 3).unwrap();
        let out = step_zo_muon(&f, &mut x, &cfg, &mut state).unwrap();
        let p = state.projections[0].as_ref().unwrap();
        let d = out.update.value(0).scaled(-1.0 / 0.1);
        assert!(p.complement_residual(&d).max_abs() < 1e-10);
        let sv = singular_values(&d).unwrap();
        for s in &sv[..4] {
            assert!((s - 1.0).abs() < 1e-8, "{s}");
        }
        assert!(sv[4] < 1e-8);
        assert_eq!(out.queries_used, 5);
        assert_eq!(f.query_count(), 5);
    }

    #[test]
    fn constant_objective_leaves_x_bit_identical() {
        for kind in OptimizerKind::ALL {
            let x0 = ParamSpace::new()
                .with_matrix("w", gaussian_matrix(6, 5, 1))
                .with_vector("b", gaussian_matrix(6, 1, 2));
            let f = FnObjective::constant(x0.clone(), 1.25);
            let cfg = OptimizerConfig::defaults(kind).rank(2);
            let mut state = OptimizerState::new(kind, &cfg, &x0, 0).unwrap();
            let mut x = x0.clone();
            for _ in 0..3 {
                step(kind, &f, &mut x, &cfg, &mut state).unwrap();
            }
            assert_eq!(x, x0, "{kind:?}");
        }
    }
}
