use crate::linalg::{orthonormalize_columns, sample_projection, Matrix, Projection};
use crate::optimizers::{OptimizerConfig, OptimizerError, OptimizerKind, ProjectionStrategy};
use crate::params::{BlockKind, ParamSpace};
use crate::rng::{derive_seed, gaussian_matrix, stream};

/// Mutable per-run state: step counter, per-block projections (or LOZO
/// left factors) and the sketching momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    pub rng_root_seed: u64,
    pub projections: Vec<Option<Projection>>,
    pub left_factors: Vec<Option<Matrix>>,
    pub sketch_momentum: Vec<Option<Matrix>>,
    /// Step of the most recent resampling.
    pub last_resample: u64,
    matrix_blocks: Vec<bool>,
}

impl OptimizerState {
    /// Validates `cfg` and draws the initial projections (step 0).
    pub fn new(
        kind: OptimizerKind,
        cfg: &OptimizerConfig,
        x: &ParamSpace,
        seed: u64,
    ) -> Result<Self, OptimizerError> {
        cfg.validate(kind)?;
        if kind == OptimizerKind::ZoMuon && cfg.n_queries == 1 {
            log::warn!(
                "zo-muon with n_queries = 1: msign discards the estimate's scale, expect degraded progress"
            );
        }
        let matrix_blocks: Vec<bool> = x
            .blocks()
            .iter()
            .map(|b| b.kind == BlockKind::Matrix)
            .collect();
        let sketching =
            kind.uses_projections() && cfg.projection_strategy == ProjectionStrategy::Sketching;
        let mut state = Self {
            kind,
            step: 0,
            rng_root_seed: seed,
            projections: vec![None; x.len()],
            left_factors: vec![None; x.len()],
            sketch_momentum: x
                .blocks()
                .iter()
                .map(|b| {
                    (sketching && b.kind == BlockKind::Matrix)
                        .then(|| Matrix::zeros(b.value.rows(), b.value.cols()))
                })
                .collect(),
            last_resample: 0,
            matrix_blocks,
        };
        resample_projection(&mut state, cfg, &x.shapes())?;
        Ok(state)
    }

    /// Whether projections are redrawn before step `t`: `t > 0` and `t mod v = 0`.
    pub fn resample_due_at(step: u64, interval: u64) -> bool {
        step > 0 && step.is_multiple_of(interval)
    }

    pub(crate) fn resample_due(&self, interval: u64) -> bool {
        Self::resample_due_at(self.step, interval)
    }

    /// `M ← βM + (1−β) ĝ` on every block that keeps a momentum.
    pub(crate) fn accumulate_sketch(&mut self, lifted: &ParamSpace, beta: f64) {
        for (b, m) in self.sketch_momentum.iter_mut().enumerate() {
            if let Some(m) = m {
                m.scale_mut(beta);
                m.axpy(1.0 - beta, lifted.value(b));
            }
        }
    }
}

/// Redraws every projection (or LOZO left factor) for the current step.
///
/// Random strategy: `P = sample_projection(m, r_b, derive_seed(root, [PROJECTION, t, b]))`.
/// Sketching strategy: `P = orth(M Q)` with Gaussian `Q ∈ R^{n×r_b}`, falling
/// back to the random draw while `M = 0`.
pub fn resample_projection(
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
    shapes: &[(usize, usize)],
) -> Result<(), OptimizerError> {
    let t = state.step;
    let root = state.rng_root_seed;
    for (b, &(m, n)) in shapes.iter().enumerate() {
        if !state.matrix_blocks[b] {
            continue;
        }
        let r = cfg.rank.min(m).min(n);
        match state.kind {
            OptimizerKind::Mezo => {}
            OptimizerKind::Lozo => {
                let seed = derive_seed(root, &[stream::LOW_RANK_LEFT, t, b as u64]);
                state.left_factors[b] = Some(gaussian_matrix(m, r, seed));
            }
            OptimizerKind::SubspaceMezo | OptimizerKind::ZoMuon => {
                let sketched = match &state.sketch_momentum[b] {
                    Some(mom) if !mom.is_zero() => {
                        let seed = derive_seed(root, &[stream::SKETCH, t, b as u64]);
                        let q = gaussian_matrix(n, r, seed);
                        let p = orthonormalize_columns(&mom.matmul(&q))?;
                        Some(Projection::from_orthonormal(p, seed, t))
                    }
                    _ => None,
                };
                let p = match sketched {
                    Some(p) => p,
                    None => {
                        let seed = derive_seed(root, &[stream::PROJECTION, t, b as u64]);
                        sample_projection(m, r, seed)?.with_birth_step(t)
                    }
                };
                state.projections[b] = Some(p);
            }
        }
    }
    state.last_resample = t;
    Ok(())
}
