//! Dense-matrix primitives: random column-orthonormal projections, the matrix
//! sign function (exact SVD and Newton–Schulz), and energy-based effective rank.
//!
//! [`Matrix`] is a thin, always finite-on-construction wrapper around
//! `nalgebra`'s `DMatrix<f64>`. QR comes from `nalgebra`; the SVD is a
//! one-sided Jacobi iteration, which stays accurate on rank-deficient input.

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::rng;

/// Relative threshold below which a singular value is treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-7;

/// Iteration count used by [`msign_ns`] when the caller has no preference.
pub const DEFAULT_NS_ITERATIONS: usize = 5;

/// Energy fraction used for effective-rank measurements.
pub const DEFAULT_ENERGY: f64 = 0.9999;

const JACOBI_MAX_SWEEPS: usize = 60;
const JACOBI_TOL: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("invalid dimension: {rows}x{cols} (both must be positive)")]
    InvalidDimension { rows: usize, cols: usize },
    #[error("invalid rank {rank} for a space of dimension {dim}")]
    InvalidRank { rank: usize, dim: usize },
    #[error("data length {got} does not match {rows}x{cols}")]
    DataLength {
        rows: usize,
        cols: usize,
        got: usize,
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNoConvergence { rows: usize, cols: usize },
    #[error("Newton-Schulz produced non-finite values for a {rows}x{cols} matrix")]
    NewtonSchulzDiverged { rows: usize, cols: usize },
    #[error("columns are not orthonormal (max |PᵀP − I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("energy fraction {0} outside (0, 1]")]
    InvalidEnergy(f64),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// A real, finite, non-empty dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix(DMatrix<f64>);

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{:?} {:?}", self.shape(), self.to_row_major())
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting empty shapes and
    /// non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::InvalidDimension { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self(DMatrix::from_row_slice(rows, cols, &data)))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.len());
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_row_major(rows.len(), cols, data)
    }

    /// Wraps an existing `nalgebra` matrix after validating it.
    pub fn from_dmatrix(m: DMatrix<f64>) -> Result<Self, LinalgError> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(LinalgError::InvalidDimension {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !m[(i, j)].is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        assert!(n > 0, "matrix dimensions must be positive");
        Self(DMatrix::identity(n, n))
    }

    /// Square diagonal matrix.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self, LinalgError> {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            data[i * n + i] = *d;
        }
        Self::from_row_major(n, n, data)
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Result<Self, LinalgError> {
        let data = u
            .iter()
            .flat_map(|a| v.iter().map(move |b| a * b))
            .collect();
        Self::from_row_major(u.len(), v.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.0[(row, col)] = value;
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let (r, c) = self.shape();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> Matrix {
        Self(self.0.transpose())
    }

    /// # Panics
    /// On inner-dimension mismatch.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols(),
            rhs.rows(),
            "matmul shape mismatch: {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        Self(&self.0 * &rhs.0)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn tr_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows(), rhs.rows(), "tr_matmul shape mismatch");
        Self(self.0.tr_mul(&rhs.0))
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Self(&self.0 * alpha)
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        self.0 *= alpha;
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        self.0.zip_apply(&other.0, |a, b| *a += alpha * b);
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        Self(&self.0 - &other.0)
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        self.0.dot(&other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "diff shape mismatch");
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// The first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        assert!(k > 0 && k <= self.cols());
        Self(self.0.columns(0, k).into_owned())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }
}

/// Singular values (descending) and the cumulative energy they capture.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub singular_values: Vec<f64>,
    pub energy_fractions: Vec<f64>,
}

/// A column-orthonormal `m × r` matrix together with the seed it was drawn
/// from and the optimizer step at which it was created.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    matrix: Matrix,
    pub seed: u64,
    pub born_at_step: u64,
}

impl Projection {
    /// Wraps a matrix that the caller guarantees to be column-orthonormal.
    pub(crate) fn from_orthonormal(matrix: Matrix, seed: u64, born_at_step: u64) -> Self {
        Self {
            matrix,
            seed,
            born_at_step,
        }
    }

    /// Wraps `matrix` after checking `PᵀP = I` to 1e-10 per entry.
    pub fn from_matrix(matrix: Matrix, seed: u64, born_at_step: u64) -> Result<Self, LinalgError> {
        if matrix.cols() > matrix.rows() {
            return Err(LinalgError::InvalidRank {
                rank: matrix.cols(),
                dim: matrix.rows(),
            });
        }
        let p = Self::from_orthonormal(matrix, seed, born_at_step);
        if p.orthonormality_defect() > 1e-10 {
            return Err(LinalgError::NotOrthonormal(p.orthonormality_defect()));
        }
        Ok(p)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn ambient_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.cols()
    }

    pub fn with_birth_step(mut self, step: u64) -> Self {
        self.born_at_step = step;
        self
    }

    /// Largest entry of `|PᵀP − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.matrix.tr_matmul(&self.matrix);
        gram.max_abs_diff(&Matrix::identity(self.rank()))
    }

    /// `(I − PPᵀ) A`, the part of `A` outside the column space of `P`.
    pub fn complement_residual(&self, a: &Matrix) -> Matrix {
        let inside = self.matrix.matmul(&self.matrix.tr_matmul(a));
        a.sub(&inside)
    }
}

/// Thin-QR orthonormalization of the columns of `a` (requires `rows ≥ cols`),
/// with column signs chosen so that the diagonal of R is non-negative.
pub fn orthonormalize_columns(a: &Matrix) -> Result<Matrix, LinalgError> {
    let (m, r) = a.shape();
    if r > m {
        return Err(LinalgError::InvalidRank { rank: r, dim: m });
    }
    let qr = a.as_dmatrix().clone().qr();
    let mut q = qr.q();
    let rmat = qr.r();
    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Matrix::from_dmatrix(q)
}

/// Draws a random column-orthonormal `m × r` projection from the QR
/// decomposition of a Gaussian matrix seeded by `seed`.
pub fn sample_projection(m: usize, r: usize, seed: u64) -> Result<Projection, LinalgError> {
    if m == 0 || r == 0 {
        return Err(LinalgError::InvalidDimension { rows: m, cols: r });
    }
    if r > m {
        return Err(LinalgError::InvalidRank { rank: r, dim: m });
    }
    let gaussian = rng::gaussian_matrix(m, r, seed);
    let q = orthonormalize_columns(&gaussian)?;
    Ok(Projection::from_orthonormal(q, seed, 0))
}

struct SortedSvd {
    u: DMatrix<f64>,
    singular_values: Vec<f64>,
    v_t: DMatrix<f64>,
}

/// One-sided (Hestenes) Jacobi SVD of a matrix with `rows >= cols`.
///
/// Returns `(W, V)` where the columns of `W = AV` are mutually orthogonal;
/// their norms are the singular values.
fn jacobi_rotate(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    // columns this small relative to A carry no information; rotating them
    // only chases rounding noise
    let negligible = (f64::EPSILON * a.norm()).powi(2);
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (w.column(p), w.column(q));
                    (cp.norm_squared(), cq.norm_squared(), cp.dot(&cq))
                };
                if alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            return Some((w, v));
        }
    }
    None
}

/// Thin SVD with singular values in non-increasing order. Left singular
/// vectors belonging to zero singular values are completed to an
/// orthonormal set.
fn svd_sorted(g: &Matrix) -> Result<SortedSvd, LinalgError> {
    let (rows, cols) = g.shape();
    let tall = rows >= cols;
    let a = if tall {
        g.as_dmatrix().clone()
    } else {
        g.as_dmatrix().transpose()
    };
    let (w, v) = jacobi_rotate(&a).ok_or(LinalgError::SvdNoConvergence { rows, cols })?;
    let k = a.ncols();
    let norms: Vec<f64> = (0..k).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let m = a.nrows();
    let sigma_max = norms[order[0]];
    let mut left = DMatrix::<f64>::zeros(m, k);
    let mut right = DMatrix::<f64>::zeros(k, k);
    let mut singular_values = Vec::with_capacity(k);
    let mut filled = 0;
    for (dst, &src) in order.iter().enumerate() {
        right.set_column(dst, &v.column(src));
        let s = norms[src];
        singular_values.push(s);
        if s > f64::EPSILON * sigma_max * (m as f64) && s > 0.0 {
            left.set_column(dst, &(w.column(src) / s));
            filled += 1;
        }
    }
    // complete the left basis for (numerically) zero singular values
    let mut e = 0;
    for dst in filled..k {
        loop {
            let mut cand = nalgebra::DVector::<f64>::zeros(m);
            cand[e % m] = 1.0;
            e += 1;
            for _ in 0..2 {
                for j in 0..dst {
                    let proj = left.column(j).dot(&cand);
                    cand -= left.column(j) * proj;
                }
            }
            let nrm = cand.norm();
            if nrm > 1e-6 {
                left.set_column(dst, &(cand / nrm));
                break;
            }
            if e > 4 * m {
                return Err(LinalgError::SvdNoConvergence { rows, cols });
            }
        }
    }
    Ok(if tall {
        SortedSvd {
            u: left,
            singular_values,
            v_t: right.transpose(),
        }
    } else {
        SortedSvd {
            u: right,
            singular_values,
            v_t: left.transpose(),
        }
    })
}

/// Singular values of `g` in non-increasing order.
pub fn singular_values(g: &Matrix) -> Result<Vec<f64>, LinalgError> {
    Ok(svd_sorted(g)?.singular_values)
}

/// The `k` leading left singular vectors of `g` as an `m × k` projection.
pub fn leading_left_singular_vectors(g: &Matrix, k: usize) -> Result<Projection, LinalgError> {
    let (rows, cols) = g.shape();
    if k == 0 || k > rows.min(cols) {
        return Err(LinalgError::InvalidRank {
            rank: k,
            dim: rows.min(cols),
        });
    }
    let svd = svd_sorted(g)?;
    let u = Matrix::from_dmatrix(svd.u.columns(0, k).into_owned())?;
    Ok(Projection::from_orthonormal(u, 0, 0))
}

/// Matrix sign via the exact SVD: `U_k V_kᵀ` over the singular values
/// strictly above `rank_tol · σ_max`. The zero matrix maps to zero.
pub fn msign_svd(g: &Matrix, rank_tol: f64) -> Result<Matrix, LinalgError> {
    if g.is_zero() {
        return Ok(Matrix::zeros(g.rows(), g.cols()));
    }
    let svd = svd_sorted(g)?;
    let sigma_max = svd.singular_values[0];
    let cutoff = rank_tol * sigma_max;
    let k = svd
        .singular_values
        .iter()
        .take_while(|&&s| s > cutoff)
        .count();
    if k == 0 {
        return Ok(Matrix::zeros(g.rows(), g.cols()));
    }
    let uk = svd.u.columns(0, k);
    let vk_t = svd.v_t.rows(0, k);
    Matrix::from_dmatrix(uk * vk_t)
}

/// Polynomial coefficients `(a, b, c)` of one quintic Newton–Schulz step
/// `X ← aX + b(XXᵀ)X + c(XXᵀ)²X`.
pub type NsCoefficients = (f64, f64, f64);

/// Coefficient schedules for [`msign_ns_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NsSchedule {
    /// Per-step minimax quintics for singular values in `[0.01, 1]` after
    /// Frobenius normalization; five steps bring them within ~1e-6 of one.
    /// Steps beyond the fifth reuse the order-5 Newton–Schulz polynomial.
    #[default]
    Convergent,
    /// The fixed Muon quintic `(3.4445, −4.7750, 2.0315)`. It drives singular
    /// values into roughly `[0.7, 1.2]` rather than to one.
    MuonQuintic,
}

const CONVERGENT_SCHEDULE: [NsCoefficients; 5] = [
    (8.093368530547915, -23.62043039137329, 17.446151795933037),
    (3.636585567857215, -2.7219267599322516, 0.5365462905204653),
    (2.661300026408633, -1.9771545979245249, 0.4526164270106809),
    (1.9561717080705683, -1.3375078690827737, 0.3838527516417583),
    (1.8750796132552754, -1.25001128887479, 0.3749317286537982),
];
const ORDER5_NEWTON_SCHULZ: NsCoefficients = (15.0 / 8.0, -10.0 / 8.0, 3.0 / 8.0);
const MUON_QUINTIC: NsCoefficients = (3.4445, -4.7750, 2.0315);

impl NsSchedule {
    pub fn coefficients(self, iteration: usize) -> NsCoefficients {
        match self {
            NsSchedule::Convergent => CONVERGENT_SCHEDULE
                .get(iteration)
                .copied()
                .unwrap_or(ORDER5_NEWTON_SCHULZ),
            NsSchedule::MuonQuintic => MUON_QUINTIC,
        }
    }
}

/// Newton–Schulz approximation of the matrix sign with the default schedule.
pub fn msign_ns(g: &Matrix, iterations: usize) -> Result<Matrix, LinalgError> {
    msign_ns_with(g, iterations, NsSchedule::default())
}

/// Newton–Schulz approximation of the matrix sign.
///
/// `g` is pre-normalized by its Frobenius norm so every singular value lies
/// in `(0, 1]`. Tall inputs are processed transposed so the Gram matrix is
/// formed on the smaller side.
pub fn msign_ns_with(
    g: &Matrix,
    iterations: usize,
    schedule: NsSchedule,
) -> Result<Matrix, LinalgError> {
    let (rows, cols) = g.shape();
    let norm = g.frobenius_norm();
    if norm == 0.0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    let transposed = rows > cols;
    let mut x = if transposed {
        g.as_dmatrix().transpose() / norm
    } else {
        g.as_dmatrix() / norm
    };
    for it in 0..iterations {
        let (a, b, c) = schedule.coefficients(it);
        let gram = &x * x.transpose();
        let poly = &gram * b + (&gram * &gram) * c;
        x = &x * a + poly * &x;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NewtonSchulzDiverged { rows, cols });
    }
    Matrix::from_dmatrix(if transposed { x.transpose() } else { x })
}

/// Singular values and cumulative normalized energy `Σ_{i≤k} σ_i² / Σ σ_i²`.
pub fn spectral_summary(g: &Matrix) -> Result<SpectralSummary, LinalgError> {
    let singular_values = singular_values(g)?;
    let mut cumulative = Vec::with_capacity(singular_values.len());
    let mut acc = 0.0;
    for s in &singular_values {
        acc += s * s;
        cumulative.push(acc);
    }
    let total = acc;
    let energy_fractions = if total > 0.0 {
        cumulative.iter().map(|c| c / total).collect()
    } else {
        vec![0.0; cumulative.len()]
    };
    Ok(SpectralSummary {
        singular_values,
        energy_fractions,
    })
}

/// Smallest `k` whose leading singular values capture at least `energy` of
/// the squared-singular-value mass. Zero for the zero matrix.
pub fn effective_rank(g: &Matrix, energy: f64) -> Result<usize, LinalgError> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(LinalgError::InvalidEnergy(energy));
    }
    if g.is_zero() {
        return Ok(0);
    }
    let summary = spectral_summary(g)?;
    let k = summary
        .energy_fractions
        .iter()
        .position(|&e| e >= energy)
        .map_or(summary.energy_fractions.len(), |p| p + 1);
    Ok(k)
}
