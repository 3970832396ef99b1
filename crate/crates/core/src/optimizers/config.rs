use std::fmt;
use std::str::FromStr;

use crate::estimators::{DiffScheme, EstimatorConfig, DEFAULT_MU, MIN_MU};
use crate::linalg::{NsSchedule, DEFAULT_NS_ITERATIONS};
use crate::optimizers::OptimizerError;

pub const DEFAULT_SKETCH_BETA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Mezo,
    SubspaceMezo,
    Lozo,
    ZoMuon,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Mezo,
        OptimizerKind::SubspaceMezo,
        OptimizerKind::Lozo,
        OptimizerKind::ZoMuon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Mezo => "mezo",
            OptimizerKind::SubspaceMezo => "subspace-mezo",
            OptimizerKind::Lozo => "lozo",
            OptimizerKind::ZoMuon => "zo-muon",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(|k| k.name()).join(", ")
    }

    /// Whether the kind keeps column-orthonormal projections per matrix block.
    pub fn uses_projections(self) -> bool {
        matches!(self, OptimizerKind::SubspaceMezo | OptimizerKind::ZoMuon)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown optimizer kind {s:?}; valid kinds: {}",
                    Self::valid_names()
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MsignBackend {
    #[default]
    Svd,
    Ns,
}

impl FromStr for MsignBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svd" => Ok(Self::Svd),
            "ns" => Ok(Self::Ns),
            _ => Err(format!("unknown msign backend {s:?}; valid: svd, ns")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionStrategy {
    #[default]
    Random,
    Sketching,
}

impl FromStr for ProjectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "sketching" => Ok(Self::Sketching),
            _ => Err(format!(
                "unknown projection strategy {s:?}; valid: random, sketching"
            )),
        }
    }
}

/// Scalar hyperparameters of every optimizer kind.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub mu: f64,
    pub n_queries: usize,
    /// Requested rank; clamped per block to `min(r, m, n)`.
    pub rank: usize,
    pub resample_interval: u64,
    pub msign_backend: MsignBackend,
    pub ns_iterations: usize,
    pub ns_schedule: NsSchedule,
    pub projection_strategy: ProjectionStrategy,
    pub sketch_momentum_beta: f64,
    pub total_steps: u64,
    /// `None` picks the kind's natural scheme.
    pub scheme: Option<DiffScheme>,
    pub parallel: bool,
}

impl OptimizerConfig {
    pub fn defaults(kind: OptimizerKind) -> Self {
        let (learning_rate, n_queries) = match kind {
            OptimizerKind::ZoMuon => (1e-2, 4),
            _ => (1e-3, 1),
        };
        Self {
            learning_rate,
            mu: DEFAULT_MU,
            n_queries,
            rank: 8,
            resample_interval: 100,
            msign_backend: MsignBackend::Svd,
            ns_iterations: DEFAULT_NS_ITERATIONS,
            ns_schedule: NsSchedule::default(),
            projection_strategy: ProjectionStrategy::Random,
            sketch_momentum_beta: DEFAULT_SKETCH_BETA,
            total_steps: 0,
            scheme: None,
            parallel: false,
        }
    }

    pub fn learning_rate(mut self, eta: f64) -> Self {
        self.learning_rate = eta;
        self
    }

    pub fn mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn n_queries(mut self, nq: usize) -> Self {
        self.n_queries = nq;
        self
    }

    pub fn rank(mut self, r: usize) -> Self {
        self.rank = r;
        self
    }

    pub fn resample_interval(mut self, v: u64) -> Self {
        self.resample_interval = v;
        self
    }

    pub fn total_steps(mut self, t: u64) -> Self {
        self.total_steps = t;
        self
    }

    pub fn scheme(mut self, scheme: DiffScheme) -> Self {
        self.scheme = Some(scheme);
        self
    }

    pub fn backend(mut self, backend: MsignBackend) -> Self {
        self.msign_backend = backend;
        self
    }

    pub fn strategy(mut self, strategy: ProjectionStrategy) -> Self {
        self.projection_strategy = strategy;
        self
    }

    /// The difference scheme `kind` will use.
    pub fn resolved_scheme(&self, kind: OptimizerKind) -> DiffScheme {
        self.scheme.unwrap_or(match kind {
            OptimizerKind::Mezo if self.n_queries == 1 => DiffScheme::Central,
            OptimizerKind::Lozo => DiffScheme::Central,
            _ => DiffScheme::Forward,
        })
    }

    pub fn validate(&self, kind: OptimizerKind) -> Result<(), OptimizerError> {
        let bad = |msg: String| Err(OptimizerError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(self.mu >= MIN_MU) || !self.mu.is_finite() {
            return bad(format!("mu must be at least {MIN_MU:e}, got {}", self.mu));
        }
        if self.n_queries == 0 || self.rank == 0 || self.resample_interval == 0 {
            return bad("n_queries, rank and resample_interval must be positive".into());
        }
        if self.ns_iterations == 0 {
            return bad("ns_iterations must be positive".into());
        }
        if !(0.0..1.0).contains(&self.sketch_momentum_beta) {
            return bad(format!(
                "sketch_momentum_beta must lie in [0, 1), got {}",
                self.sketch_momentum_beta
            ));
        }
        let scheme = self.resolved_scheme(kind);
        match kind {
            OptimizerKind::SubspaceMezo | OptimizerKind::ZoMuon
                if scheme == DiffScheme::Central =>
            {
                return bad(format!("{kind} is defined with forward differences only"));
            }
            OptimizerKind::Lozo if scheme != DiffScheme::Central || self.n_queries != 1 => {
                return bad("lozo uses a single central-difference query".into());
            }
            _ => {}
        }
        if scheme == DiffScheme::Central && self.n_queries != 1 {
            return bad(format!(
                "the central scheme requires n_queries = 1, got {}",
                self.n_queries
            ));
        }
        Ok(())
    }

    pub fn estimator_config(&self, kind: OptimizerKind) -> Result<EstimatorConfig, OptimizerError> {
        self.validate(kind)?;
        Ok(
            EstimatorConfig::new(self.mu, self.n_queries, self.resolved_scheme(kind))?
                .parallel(self.parallel),
        )
    }

    /// Objective evaluations per step.
    pub fn queries_per_step(&self, kind: OptimizerKind) -> u64 {
        let nq = self.n_queries as u64;
        match self.resolved_scheme(kind) {
            DiffScheme::Forward => nq + 1,
            DiffScheme::Central => 2 * nq,
        }
    }

    /// Largest step count whose queries fit in `budget`.
    pub fn steps_for_budget(&self, kind: OptimizerKind, budget: u64) -> u64 {
        budget / self.queries_per_step(kind)
    }
}
