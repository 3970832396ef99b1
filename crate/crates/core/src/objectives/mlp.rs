use nalgebra::DMatrix;

use crate::linalg::Matrix;
use crate::objectives::{Dataset, Descriptor, Objective, ObjectiveError, QueryCounter};
use crate::params::ParamSpace;
use crate::rng::{self, stream};

const MAX_WIDTH: usize = 64;

/// A tanh MLP with softmax cross-entropy on Gaussian-blob data.
///
/// `widths = [d_in, h_1, ..., classes]`. Layer `l` has a matrix block
/// `layer{l}.weight` of shape `widths[l+1] × widths[l]` and a vector block
/// `layer{l}.bias` of shape `widths[l+1] × 1`.
pub struct Mlp {
    descriptor: Descriptor,
    widths: Vec<usize>,
    inputs: DMatrix<f64>,
    labels: Vec<usize>,
    initial: ParamSpace,
    counter: QueryCounter,
}

fn check_widths(widths: &[usize], n_samples: usize) -> Result<(), ObjectiveError> {
    if widths.len() < 3 {
        return Err(ObjectiveError::InvalidDimensions(format!(
            "an MLP needs at least 2 layers (3 widths), got {widths:?}"
        )));
    }
    if widths.iter().any(|&w| w == 0 || w > MAX_WIDTH) {
        return Err(ObjectiveError::InvalidDimensions(format!(
            "MLP widths must lie in 1..={MAX_WIDTH}, got {widths:?}"
        )));
    }
    let classes = *widths.last().unwrap();
    if classes < 2 || n_samples == 0 {
        return Err(ObjectiveError::InvalidDimensions(format!(
            "MLP needs >= 2 classes and >= 1 sample, got {classes} classes, {n_samples} samples"
        )));
    }
    Ok(())
}

pub fn make_mlp(widths: &[usize], n_samples: usize, seed: u64) -> Result<Mlp, ObjectiveError> {
    check_widths(widths, n_samples)?;
    let classes = *widths.last().unwrap();
    let d_in = widths[0];

    let centers =
        rng::gaussian_matrix(classes, d_in, rng::derive_seed(seed, &[stream::DATA, 0])).scaled(2.0);
    let noise = rng::gaussian_matrix(n_samples, d_in, rng::derive_seed(seed, &[stream::DATA, 1]));
    let labels: Vec<usize> = (0..n_samples).map(|i| i % classes).collect();
    let inputs = DMatrix::from_fn(n_samples, d_in, |i, j| {
        centers.get(labels[i], j) + noise.get(i, j)
    });
    Ok(Mlp::build(widths, inputs, labels, seed))
}

impl Mlp {
    /// An MLP on a loaded dataset: `widths = [features, hidden..., classes]`.
    pub fn from_dataset(
        data: &Dataset,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self, ObjectiveError> {
        let mut widths = vec![data.n_features()];
        widths.extend_from_slice(hidden);
        widths.push(data.n_classes());
        check_widths(&widths, data.n_samples())?;
        Ok(Self::build(
            &widths,
            data.features.as_dmatrix().clone(),
            data.labels.clone(),
            seed,
        ))
    }

    fn build(widths: &[usize], inputs: DMatrix<f64>, labels: Vec<usize>, seed: u64) -> Self {
        let layers = widths.len() - 1;
        let mut initial = ParamSpace::new();
        for l in 0..layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            // small output layer keeps the initial predictions near uniform
            let gain = if l + 1 == layers { 0.1 } else { 1.0 };
            let w = rng::gaussian_matrix(
                fan_out,
                fan_in,
                rng::derive_seed(seed, &[stream::INIT, l as u64]),
            )
            .scaled(gain / (fan_in as f64).sqrt());
            initial = initial
                .with_matrix(format!("layer{l}.weight"), w)
                .with_vector(format!("layer{l}.bias"), Matrix::zeros(fan_out, 1));
        }
        Self {
            descriptor: Descriptor {
                name: "mlp".into(),
                shapes: initial.shapes(),
                seed,
            },
            widths: widths.to_vec(),
            inputs,
            labels,
            initial,
            counter: QueryCounter::new(),
        }
    }
}

impl Mlp {
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Activations `h_0 = inputs, h_1, ..., h_L` where `h_L` holds logits.
    fn forward(&self, x: &ParamSpace) -> Vec<DMatrix<f64>> {
        let mut acts = vec![self.inputs.clone()];
        for l in 0..self.layers() {
            let w = x.value(2 * l).as_dmatrix();
            let b = x.value(2 * l + 1).as_dmatrix();
            let mut z = acts[l].clone() * w.transpose();
            for mut row in z.row_iter_mut() {
                row += b.column(0).transpose();
            }
            if l + 1 < self.layers() {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Row-wise softmax probabilities and the mean cross-entropy.
    fn softmax_loss(&self, logits: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let mut probs = logits.clone();
        let mut total = 0.0;
        for (i, mut row) in probs.row_iter_mut().enumerate() {
            let max = row.max();
            row.apply(|v| *v = (*v - max).exp());
            let sum = row.sum();
            total += sum.ln() + max - logits[(i, self.labels[i])];
            row /= sum;
        }
        (probs, total / self.labels.len() as f64)
    }
}

impl Objective for Mlp {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn loss(&self, x: &ParamSpace) -> f64 {
        let acts = self.forward(x);
        self.softmax_loss(acts.last().unwrap()).1
    }

    fn counter(&self) -> &QueryCounter {
        &self.counter
    }

    fn initial_point(&self) -> ParamSpace {
        self.initial.clone()
    }

    fn gradient(&self, x: &ParamSpace) -> Option<ParamSpace> {
        let acts = self.forward(x);
        let n = self.labels.len() as f64;
        let (mut delta, _) = self.softmax_loss(acts.last().unwrap());
        for (i, &y) in self.labels.iter().enumerate() {
            delta[(i, y)] -= 1.0;
        }
        delta /= n;
        let mut grads = vec![None; 2 * self.layers()];
        for l in (0..self.layers()).rev() {
            let gw = delta.transpose() * &acts[l];
            let gb = DMatrix::from_fn(delta.ncols(), 1, |j, _| delta.column(j).sum());
            if l > 0 {
                let w = x.value(2 * l).as_dmatrix();
                let mut back = &delta * w;
                back.zip_apply(&acts[l], |d, h| *d *= 1.0 - h * h);
                delta = back;
            }
            grads[2 * l] = Some(Matrix::from_dmatrix(gw).ok()?);
            grads[2 * l + 1] = Some(Matrix::from_dmatrix(gb).ok()?);
        }
        Some(x.with_values(grads.into_iter().map(Option::unwrap).collect()))
    }
}
