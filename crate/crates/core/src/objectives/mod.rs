//! Deterministic, query-counted benchmark objectives.
//!
//! Every objective exposes two channels:
//!
//! * [`Objective::evaluate`] is the metered channel used by zeroth-order
//!   estimators; each call increments the query counter by exactly one.
//! * [`Objective::loss`] is the unmetered oracle channel used for trace
//!   recording and finite-difference checks.

mod dataset;
mod logreg;
mod mlp;
mod quadratic;

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::params::ParamSpace;

pub use dataset::Dataset;
pub use logreg::{make_logreg, LogisticRegression};
pub use mlp::{make_mlp, Mlp};
pub use quadratic::{make_quadratic, PlantedQuadratic, QuadraticSpec};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid objective dimensions: {0}")]
    InvalidDimensions(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A monotone, thread-safe evaluation counter.
#[derive(Debug, Default)]
pub struct QueryCounter(AtomicU64);

impl QueryCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Name, block shapes and generating seed of an objective instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub name: String,
    pub shapes: Vec<(usize, usize)>,
    pub seed: u64,
}

pub trait Objective: Send + Sync {
    fn descriptor(&self) -> &Descriptor;

    /// Pure loss evaluation that does not touch the query counter.
    fn loss(&self, x: &ParamSpace) -> f64;

    fn counter(&self) -> &QueryCounter;

    /// The starting iterate for optimization runs.
    fn initial_point(&self) -> ParamSpace;

    /// Analytic gradient, when the objective has one.
    fn gradient(&self, _x: &ParamSpace) -> Option<ParamSpace> {
        None
    }

    /// Metered evaluation: counts one query.
    fn evaluate(&self, x: &ParamSpace) -> f64 {
        self.counter().increment();
        self.loss(x)
    }

    fn query_count(&self) -> u64 {
        self.counter().get()
    }
}

type LossFn = dyn Fn(&ParamSpace) -> f64 + Send + Sync;
type GradFn = dyn Fn(&ParamSpace) -> ParamSpace + Send + Sync;

/// An objective assembled from closures, mostly for tests and ad-hoc studies.
pub struct FnObjective {
    descriptor: Descriptor,
    initial: ParamSpace,
    loss: Box<LossFn>,
    gradient: Option<Box<GradFn>>,
    counter: QueryCounter,
}

impl FnObjective {
    pub fn new(
        name: impl Into<String>,
        initial: ParamSpace,
        loss: impl Fn(&ParamSpace) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            descriptor: Descriptor {
                name: name.into(),
                shapes: initial.shapes(),
                seed: 0,
            },
            initial,
            loss: Box::new(loss),
            gradient: None,
            counter: QueryCounter::new(),
        }
    }

    pub fn with_gradient(
        mut self,
        gradient: impl Fn(&ParamSpace) -> ParamSpace + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(gradient));
        self
    }

    /// `f(X) = c`.
    pub fn constant(initial: ParamSpace, c: f64) -> Self {
        let zero = initial.zeros_like();
        Self::new("constant", initial, move |_| c).with_gradient(move |_| zero.clone())
    }

    /// `f(X) = ⟨C, X⟩`.
    pub fn linear(initial: ParamSpace, c: ParamSpace) -> Self {
        let cc = c.clone();
        Self::new("linear", initial, move |x| c.dot(x)).with_gradient(move |_| cc.clone())
    }

    /// `f(X) = ½‖X − X*‖²_F`.
    pub fn isotropic_quadratic(initial: ParamSpace, target: ParamSpace) -> Self {
        let t = target.clone();
        Self::new("isotropic-quadratic", initial, move |x| {
            0.5 * x.sub(&target).dot(&x.sub(&target))
        })
        .with_gradient(move |x| x.sub(&t))
    }
}

impl Objective for FnObjective {
    fn descriptor(&self) -> &Descriptor {
        &self.descriptor
    }

    fn loss(&self, x: &ParamSpace) -> f64 {
        (self.loss)(x)
    }

    fn counter(&self) -> &QueryCounter {
        &self.counter
    }

    fn initial_point(&self) -> ParamSpace {
        self.initial.clone()
    }

    fn gradient(&self, x: &ParamSpace) -> Option<ParamSpace> {
        self.gradient.as_ref().map(|g| g(x))
    }
}
