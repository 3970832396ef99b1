//! Counter-based seed derivation and Gaussian sampling.
//!
//! Every random matrix in the crate is regenerated from a `u64` seed derived
//! from a root seed and a path of integer tags (step, query, block, ...).
//! Nothing random is ever stored to be replayed later.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

/// Stream tags keep the derived seeds of unrelated consumers apart.
pub mod stream {
    pub const PERTURBATION: u64 = 0x5045_5254;
    pub const PROJECTION: u64 = 0x5052_4f4a;
    pub const LOW_RANK_LEFT: u64 = 0x4c4f_5a4f;
    pub const SKETCH: u64 = 0x534b_4554;
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const DATA: u64 = 0x4441_5441;
    pub const INIT: u64 = 0x494e_4954;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `root` and an ordered path of tags.
///
/// The mapping is a pure function, so `(root, path)` always names the same
/// stream regardless of evaluation order or thread.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &tag| {
        splitmix64(acc ^ splitmix64(tag.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

/// A deterministic generator for the given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A `rows × cols` matrix of i.i.d. standard normal entries, filled in
/// row-major order from the stream named by `seed`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    gaussian_matrix_from(rows, cols, &mut rng)
}

pub fn gaussian_matrix_from<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Matrix::from_row_major(rows, cols, data).expect("gaussian samples are finite")
}
