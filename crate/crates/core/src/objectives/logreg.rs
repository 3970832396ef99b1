use crate::linalg::Matrix;
use crate::objectives::{Dataset, Descriptor, Objective, ObjectiveError, QueryCounter};
use crate::params::ParamSpace;
use crate::rng::{self, stream};

/// Mean binary cross-entropy of a linear classifier without intercept.
///
/// The weight is a single `n_features × 1` matrix block named `"w"`.
pub struct LogisticRegression {
    descriptor: Descriptor,
    features: Matrix,
    targets: Vec<f64>,
    counter: QueryCounter,
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Synthetic logistic regression: Gaussian features, labels from a random
/// hyperplane with 10% of them flipped.
pub fn make_logreg(
    n_samples: usize,
    n_features: usize,
    seed: u64,
) -> Result<LogisticRegression, ObjectiveError> {
    if n_samples == 0 || n_features == 0 {
        return Err(ObjectiveError::InvalidDimensions(format!(
            "logistic regression needs positive sizes, got {n_samples} samples x {n_features} features"
        )));
    }
    let features = rng::gaussian_matrix(
        n_samples,
        n_features,
        rng::derive_seed(seed, &[stream::DATA, 0]),
    );
    let w_true = rng::gaussian_matrix(n_features, 1, rng::derive_seed(seed, &[stream::DATA, 1]));
    let margins = features.matmul(&w_true);
    let mut flip = rng::rng_from_seed(rng::derive_seed(seed, &[stream::DATA, 2]));
    let labels = (0..n_samples)
        .map(|i| {
            let positive = margins.get(i, 0) > 0.0;
            let flipped = rand::Rng::random_bool(&mut flip, 0.1);
            usize::from(positive != flipped)
        })
        .collect();
    let data = Dataset::new(features, labels)?;
    let mut obj = LogisticRegression::from_dataset(&data)?;
    obj.descriptor.seed = seed;
    Ok(obj)
}

impl LogisticRegression {
    /// Labels must be 0 or 1.
    pub fn from_dataset(data: &Dataset) -> Result<Self, ObjectiveError> {
        if let Some(bad) = data.labels.iter().find(|&&l| l > 1) {
            return Err(ObjectiveError::Dataset(format!(
                "binary logistic regression needs labels in {{0, 1}}, found {bad}"
            )));
        }
        Ok(Self {
            descriptor: Descriptor {
                name: "logreg".into(),
                shapes: vec![(data.n_features(), 1)],
                seed: 0,
            },
            features: data.features.clone(),
            targets: data.labels.iter().map(|&l| l as f64).collect(),
            counter: QueryCounter::new(),
        })
    }

    fn logits(&self, x: &ParamSpace) -> Matrix {
        self.features.matmul(x.value(0))
    }
}

impl Objective for LogisticRegression {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn loss(&self, x: &ParamSpace) -> f64 {
        let z = self.logits(x);
        let n = self.targets.len();
        (0..n)
            .map(|i| softplus(z.get(i, 0)) - self.targets[i] * z.get(i, 0))
            .sum::<f64>()
            / n as f64
    }

    fn counter(&self) -> &QueryCounter {
        &self.counter
    }

    fn initial_point(&self) -> ParamSpace {
        ParamSpace::new().with_matrix("w", Matrix::zeros(self.features.cols(), 1))
    }

    fn gradient(&self, x: &ParamSpace) -> Option<ParamSpace> {
        let z = self.logits(x);
        let n = self.targets.len();
        let residual: Vec<f64> = (0..n)
            .map(|i| (sigmoid(z.get(i, 0)) - self.targets[i]) / n as f64)
            .collect();
        let r = Matrix::from_row_major(n, 1, residual).ok()?;
        Some(x.with_values(vec![self.features.tr_matmul(&r)]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_ln2() {
        let f = make_logreg(50, 6, 3).unwrap();
        let x = f.initial_point();
        assert!((f.loss(&x) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_is_non_negative_at_extreme_weights() {
        let f = make_logreg(40, 3, 1).unwrap();
        for scale in [1.0, 1e3, 1e6, -1e6] {
            let w = rng::gaussian_matrix(3, 1, 5).scaled(scale);
            let l = f.loss(&ParamSpace::new().with_matrix("w", w));
            assert!(l.is_finite() && l >= 0.0, "{l}");
        }
    }

    #[test]
    fn rejects_non_binary_labels() {
        let d = Dataset::new(Matrix::identity(3), vec![0, 1, 2]).unwrap();
        assert!(LogisticRegression::from_dataset(&d).is_err());
        assert!(make_logreg(0, 3, 0).is_err());
    }
}
