use proptest::prelude::*;

use zomuon_core::trace::{Trace, TraceRecord};
use zomuon_harness::config::parse;
use zomuon_harness::experiment::{read_trace, run_experiment, write_trace};

fn config(budget: u64, kind: &str, nq: usize, eval_every: u64) -> String {
    format!(
        r#"
[experiment]
name = "fair"
budget = {budget}
eval_every = {eval_every}

[objective]
kind = "logreg"
samples = 30
features = 4

[[optimizer]]
kind = "{kind}"
n_queries = {nq}
rank = 2
"#
    )
}

fn record() -> impl Strategy<Value = TraceRecord> {
    (any::<u64>(), any::<u64>(), any::<f64>(), 0.0f64..1e9).prop_map(
        |(step, queries, loss, elapsed_ms)| TraceRecord {
            step,
            queries,
            loss,
            elapsed_ms,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn budget_is_spent_fairly(
        budget in 1u64..400,
        kind in prop::sample::select(vec!["mezo", "subspace-mezo", "zo-muon"]),
        nq in 1usize..6,
        eval_every in 1u64..20,
    ) {
        let cfg = parse(&config(budget, kind, nq, eval_every), "fair.toml").unwrap();
        let result = run_experiment(&cfg).unwrap();
        let run = &result.runs[0];
        let cost = run.queries_per_step;
        prop_assert_eq!(run.steps, budget / cost);
        if run.steps == 0 {
            prop_assert!(run.trace.is_empty());
        } else {
            let q = run.final_queries();
            prop_assert!(q <= budget && q + cost > budget, "q={} budget={} cost={}", q, budget, cost);
            prop_assert_eq!(run.trace.last().unwrap().step, run.steps);
            prop_assert!(run.trace.records.windows(2).all(|w| w[0].step < w[1].step && w[0].queries < w[1].queries));
        }
    }

    #[test]
    fn trace_csv_round_trips(records in prop::collection::vec(record(), 0..30)) {
        let trace = Trace { eval_queries: records.len() as u64, records };
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).unwrap();
        let back = read_trace(buf.as_slice()).unwrap();
        prop_assert_eq!(back.records.len(), trace.records.len());
        for (a, b) in back.records.iter().zip(&trace.records) {
            prop_assert_eq!((a.step, a.queries), (b.step, b.queries));
            prop_assert!(a.loss.to_bits() == b.loss.to_bits() || (a.loss.is_nan() && b.loss.is_nan()));
            prop_assert_eq!(a.elapsed_ms, b.elapsed_ms);
        }
    }
}

#[test]
fn lozo_budget_uses_two_queries_per_step() {
    let cfg = parse(&config(101, "lozo", 1, 7), "fair.toml").unwrap();
    let result = run_experiment(&cfg).unwrap();
    assert_eq!(result.runs[0].steps, 50);
    assert_eq!(result.runs[0].final_queries(), 100);
}
