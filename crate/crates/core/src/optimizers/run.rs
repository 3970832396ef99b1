use std::time::Instant;

use crate::objectives::Objective;
use crate::optimizers::{step, OptimizerConfig, OptimizerError, OptimizerKind, OptimizerState};
use crate::params::ParamSpace;
use crate::trace::{Trace, TraceRecord};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub params: ParamSpace,
}

/// A failed run, keeping everything recorded before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub trace: Trace,
    pub params: ParamSpace,
    pub error: OptimizerError,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run failed after {} records: {}",
            self.trace.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Runs `cfg.total_steps` steps of `kind` from `x0`.
///
/// With `T > 0` the trace holds the initial point (step 0, 0 queries), one
/// record after every `eval_every` steps, and the final step. Losses come
/// from the unmetered channel; the query column counts only estimation
/// queries made during this run.
pub fn run(
    obj: &dyn Objective,
    x0: &ParamSpace,
    cfg: &OptimizerConfig,
    kind: OptimizerKind,
    seed: u64,
    eval_every: u64,
) -> Result<RunOutput, RunFailure> {
    let mut x = x0.clone();
    let mut trace = Trace::new();
    let fail = |trace: Trace, params: ParamSpace, error: OptimizerError| RunFailure {
        trace,
        params,
        error,
    };
    if eval_every == 0 {
        return Err(fail(
            trace,
            x,
            OptimizerError::InvalidConfig("eval_every must be positive".into()),
        ));
    }
    if cfg.total_steps == 0 {
        return Ok(RunOutput { trace, params: x });
    }
    let mut state = match OptimizerState::new(kind, cfg, &x, seed) {
        Ok(s) => s,
        Err(e) => return Err(fail(trace, x, e)),
    };

    let start = Instant::now();
    let q0 = obj.query_count();
    let record = |trace: &mut Trace, step: u64, x: &ParamSpace| {
        trace.push(TraceRecord {
            step,
            queries: obj.query_count() - q0,
            loss: obj.loss(x),
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        trace.eval_queries += 1;
    };
    record(&mut trace, 0, &x);
    for t in 1..=cfg.total_steps {
        if let Err(e) = step(kind, obj, &mut x, cfg, &mut state) {
            return Err(fail(trace, x, e));
        }
        if t % eval_every == 0 || t == cfg.total_steps {
            record(&mut trace, t, &x);
        }
    }
    Ok(RunOutput { trace, params: x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::objectives::FnObjective;
    use crate::rng::gaussian_matrix;

    fn setup() -> FnObjective {
        let x0 = ParamSpace::single(gaussian_matrix(6, 4, 1));
        FnObjective::isotropic_quadratic(x0, ParamSpace::single(Matrix::zeros(6, 4)))
    }

    #[test]
    fn zero_steps_give_empty_trace() {
        let f = setup();
        let x0 = f.initial_point();
        let cfg = OptimizerConfig::defaults(OptimizerKind::Mezo);
        let out = run(&f, &x0, &cfg, OptimizerKind::Mezo, 0, 1).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.params, x0);
        assert_eq!(f.query_count(), 0);
    }

    #[test]
    fn mezo_uses_two_queries_per_step_and_records_schedule() {
        let f = setup();
        let cfg = OptimizerConfig::defaults(OptimizerKind::Mezo).total_steps(10);
        let out = run(&f, &f.initial_point(), &cfg, OptimizerKind::Mezo, 4, 3).unwrap();
        let steps: Vec<u64> = out.trace.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 3, 6, 9, 10]);
        assert_eq!(out.trace.last().unwrap().queries, 20);
        assert_eq!(out.trace.eval_queries, 5);
    }

    #[test]
    fn same_seed_same_losses() {
        let f = setup();
        let cfg = OptimizerConfig::defaults(OptimizerKind::ZoMuon)
            .rank(2)
            .total_steps(20);
        let a = run(&f, &f.initial_point(), &cfg, OptimizerKind::ZoMuon, 9, 1).unwrap();
        let b = run(&f, &f.initial_point(), &cfg, OptimizerKind::ZoMuon, 9, 1).unwrap();
        assert_eq!(a.trace.losses(), b.trace.losses());
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn failure_keeps_partial_trace() {
        let x0 = ParamSpace::single(Matrix::zeros(2, 2));
        let f = FnObjective::new("blowup", x0.clone(), |x| {
            if x.value(0).max_abs() > 0.05 {
                f64::NAN
            } else {
                x.value(0).iter().sum()
            }
        });
        let cfg = OptimizerConfig::defaults(OptimizerKind::Mezo)
            .learning_rate(1e-2)
            .total_steps(1000);
        let err = run(&f, &x0, &cfg, OptimizerKind::Mezo, 0, 1).unwrap_err();
        assert!(!err.trace.is_empty());
        assert!(matches!(err.error, OptimizerError::Estimator(_)));
    }
}
