use crate::linalg::{orthonormalize_columns, Matrix};
use crate::objectives::{Descriptor, Objective, ObjectiveError, QueryCounter};
use crate::params::ParamSpace;
use crate::rng::{self, stream};

/// Parameters of a planted low-rank quadratic.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub rows: usize,
    pub cols: usize,
    /// Rank `k` of the curvature factor `L`.
    pub rank: usize,
    pub seed: u64,
    /// Ridge `δ` added to the curvature.
    pub ridge: f64,
    /// Ratio between the largest and smallest nonzero eigenvalue of `LLᵀ`;
    /// the eigenvalues are spaced geometrically in `[1/condition, 1]`.
    pub condition: f64,
    /// Standard deviation of the entries of the minimizer `X*`.
    pub target_scale: f64,
}

impl QuadraticSpec {
    pub fn new(rows: usize, cols: usize, rank: usize, seed: u64) -> Self {
        Self {
            rows,
            cols,
            rank,
            seed,
            ridge: 1e-4,
            condition: 1.0,
            target_scale: 1.0,
        }
    }

    pub fn ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn condition(mut self, condition: f64) -> Self {
        self.condition = condition;
        self
    }

    pub fn target_scale(mut self, scale: f64) -> Self {
        self.target_scale = scale;
        self
    }
}

/// `f(X) = ½ tr((X−X*)ᵀ (LLᵀ + δI) (X−X*))` with an `m × k` factor `L`.
///
/// The gradient `(LLᵀ + δI)(X − X*)` has numerical rank `k` whenever `δ` is
/// small, which is the low-rank structure subspace estimators exploit.
pub struct PlantedQuadratic {
    descriptor: Descriptor,
    factor: Matrix,
    target: Matrix,
    ridge: f64,
    counter: QueryCounter,
}

/// Planted quadratic with default ridge (1e-4) and isotropic curvature.
pub fn make_quadratic(
    rows: usize,
    cols: usize,
    rank: usize,
    seed: u64,
) -> Result<PlantedQuadratic, ObjectiveError> {
    PlantedQuadratic::new(&QuadraticSpec::new(rows, cols, rank, seed))
}

impl PlantedQuadratic {
    pub fn new(spec: &QuadraticSpec) -> Result<Self, ObjectiveError> {
        let QuadraticSpec {
            rows,
            cols,
            rank,
            seed,
            ridge,
            condition,
            target_scale,
        } = *spec;
        if rows == 0 || cols == 0 || rank == 0 || rank > rows {
            return Err(ObjectiveError::InvalidDimensions(format!(
                "quadratic needs 1 <= rank <= rows and positive dims, got {rows}x{cols} rank {rank}"
            )));
        }
        if !(condition >= 1.0 && condition.is_finite()) || !(ridge >= 0.0) || !(target_scale > 0.0)
        {
            return Err(ObjectiveError::InvalidDimensions(format!(
                "quadratic needs condition >= 1, ridge >= 0, target_scale > 0 \
                 (got {condition}, {ridge}, {target_scale})"
            )));
        }
        let basis = orthonormalize_columns(&rng::gaussian_matrix(
            rows,
            rank,
            rng::derive_seed(seed, &[stream::DATA, 0]),
        ))?;
        let mut factor = basis;
        for j in 0..rank {
            let t = if rank == 1 {
                0.0
            } else {
                j as f64 / (rank - 1) as f64
            };
            let eigenvalue = condition.powf(-t);
            let s = eigenvalue.sqrt();
            for i in 0..rows {
                factor.set(i, j, factor.get(i, j) * s);
            }
        }
        let target = rng::gaussian_matrix(rows, cols, rng::derive_seed(seed, &[stream::DATA, 1]))
            .scaled(target_scale);
        Ok(Self {
            descriptor: Descriptor {
                name: "planted-quadratic".into(),
                shapes: vec![(rows, cols)],
                seed,
            },
            factor,
            target,
            ridge,
            counter: QueryCounter::new(),
        })
    }

    pub fn minimizer(&self) -> ParamSpace {
        ParamSpace::single(self.target.clone())
    }

    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    fn residual(&self, x: &ParamSpace) -> Matrix {
        x.value(0).sub(&self.target)
    }
}

impl Objective for PlantedQuadratic {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn loss(&self, x: &ParamSpace) -> f64 {
        let d = self.residual(x);
        let projected = self.factor.tr_matmul(&d);
        let norm_d = d.frobenius_norm();
        0.5 * projected.dot(&projected) + 0.5 * self.ridge * norm_d * norm_d
    }

    fn counter(&self) -> &QueryCounter {
        &self.counter
    }

    fn initial_point(&self) -> ParamSpace {
        ParamSpace::single(Matrix::zeros(self.target.rows(), self.target.cols()))
    }

    fn gradient(&self, x: &ParamSpace) -> Option<ParamSpace> {
        let d = self.residual(x);
        let mut g = self.factor.matmul(&self.factor.tr_matmul(&d));
        g.axpy(self.ridge, &d);
        Some(ParamSpace::single(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{effective_rank, DEFAULT_ENERGY};

    #[test]
    fn minimizer_has_zero_loss_and_gradient() {
        let q = make_quadratic(16, 8, 3, 5).unwrap();
        let xs = q.minimizer();
        assert_eq!(q.loss(&xs), 0.0);
        assert_eq!(q.gradient(&xs).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn gradient_rank_matches_planted_rank_without_ridge() {
        for (k, condition) in [(1, 1.0), (4, 1.0), (8, 1.0), (8, 10.0)] {
            let q = PlantedQuadratic::new(
                &QuadraticSpec::new(32, 24, k, 9)
                    .ridge(0.0)
                    .condition(condition),
            )
            .unwrap();
            let x = ParamSpace::single(rng::gaussian_matrix(32, 24, 77));
            let g = q.gradient(&x).unwrap();
            assert_eq!(effective_rank(g.value(0), DEFAULT_ENERGY).unwrap(), k);
        }
    }

    #[test]
    fn gradient_rank_with_default_ridge_is_within_one() {
        let q = make_quadratic(64, 64, 8, 1).unwrap();
        let x = ParamSpace::single(rng::gaussian_matrix(64, 64, 2));
        let r = effective_rank(q.gradient(&x).unwrap().value(0), DEFAULT_ENERGY).unwrap();
        assert!((7..=9).contains(&r), "rank {r}");
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(make_quadratic(4, 4, 5, 0).is_err());
        assert!(make_quadratic(4, 4, 0, 0).is_err());
        assert!(PlantedQuadratic::new(&QuadraticSpec::new(4, 4, 2, 0).condition(0.5)).is_err());
    }

    #[test]
    fn curvature_spectrum_follows_condition() {
        let q = PlantedQuadratic::new(&QuadraticSpec::new(20, 5, 4, 3).condition(1000.0)).unwrap();
        let gram = q.factor().tr_matmul(q.factor());
        assert!((gram.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((gram.get(3, 3) - 1e-3).abs() < 1e-12);
        assert!(gram.get(0, 1).abs() < 1e-12);
    }
}
