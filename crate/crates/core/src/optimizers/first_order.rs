//! First-order reference steps used as oracles. They require an analytic
//! gradient and do not touch the query counter.

use crate::linalg::{
    msign_ns_with, msign_svd, Matrix, NsSchedule, Projection, DEFAULT_NS_ITERATIONS,
    DEFAULT_RANK_TOL,
};
use crate::objectives::Objective;
use crate::optimizers::{MsignBackend, OptimizerError};
use crate::params::{BlockKind, ParamSpace};

fn analytic_gradient(obj: &dyn Objective, x: &ParamSpace) -> Result<ParamSpace, OptimizerError> {
    obj.gradient(x)
        .ok_or_else(|| OptimizerError::NoGradient(obj.descriptor().name.clone()))
}

/// `msign(G)` with the chosen backend (NS uses its default schedule).
pub fn fo_muon_direction(g: &Matrix, backend: MsignBackend) -> Result<Matrix, OptimizerError> {
    Ok(match backend {
        MsignBackend::Svd => msign_svd(g, DEFAULT_RANK_TOL)?,
        MsignBackend::Ns => msign_ns_with(g, DEFAULT_NS_ITERATIONS, NsSchedule::default())?,
    })
}

/// `P msign_svd(Pᵀ G)`.
pub fn fo_lowrank_muon_direction(g: &Matrix, p: &Projection) -> Result<Matrix, OptimizerError> {
    Ok(p.matrix()
        .matmul(&msign_svd(&p.matrix().tr_matmul(g), DEFAULT_RANK_TOL)?))
}

/// `X ← X − η ∇f(X)`.
pub fn step_fo_sgd(
    obj: &dyn Objective,
    x: &mut ParamSpace,
    eta: f64,
) -> Result<(), OptimizerError> {
    let g = analytic_gradient(obj, x)?;
    x.axpy(-eta, &g);
    Ok(())
}

/// `X ← X − η msign(∇f(X))` on matrix blocks, plain gradient steps on
/// vector blocks.
pub fn step_fo_muon(
    obj: &dyn Objective,
    x: &mut ParamSpace,
    eta: f64,
    backend: MsignBackend,
) -> Result<(), OptimizerError> {
    let g = analytic_gradient(obj, x)?;
    for b in 0..x.len() {
        let d = match x.block(b).kind {
            BlockKind::Matrix => fo_muon_direction(g.value(b), backend)?,
            BlockKind::Vector => g.value(b).clone(),
        };
        x.value_mut(b).axpy(-eta, &d);
    }
    Ok(())
}

/// `X ← X − η P msign_svd(Pᵀ ∇f(X))` on blocks that have a projection;
/// blocks given `None` take plain gradient steps.
pub fn step_fo_lowrank_muon(
    obj: &dyn Objective,
    x: &mut ParamSpace,
    projections: &[Option<&Projection>],
    eta: f64,
) -> Result<(), OptimizerError> {
    let g = analytic_gradient(obj, x)?;
    for b in 0..x.len() {
        let d = match projections.get(b).copied().flatten() {
            Some(p) => fo_lowrank_muon_direction(g.value(b), p)?,
            None => g.value(b).clone(),
        };
        x.value_mut(b).axpy(-eta, &d);
    }
    Ok(())
}
