//! Per-run optimization traces.

/// One recorded point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: u64,
    /// Gradient-estimation queries consumed since the run started.
    pub queries: u64,
    /// Loss at the unperturbed iterate (not counted as a query).
    pub loss: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Unmetered loss evaluations made while recording.
    pub eval_queries: u64,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Cumulative queries at the first record whose loss is `<= threshold`.
    pub fn queries_to_threshold(&self, threshold: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.loss <= threshold)
            .map(|r| r.queries)
    }

    /// The trace with wall-clock times zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Trace {
        Trace {
            records: self
                .records
                .iter()
                .map(|r| TraceRecord {
                    elapsed_ms: 0.0,
                    ..*r
                })
                .collect(),
            eval_queries: self.eval_queries,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64, queries: u64, loss: f64) -> TraceRecord {
        TraceRecord {
            step,
            queries,
            loss,
            elapsed_ms: 1.5,
        }
    }

    #[test]
    fn threshold_lookup() {
        let mut t = Trace::new();
        t.push(rec(0, 0, 10.0));
        t.push(rec(5, 10, 4.0));
        t.push(rec(10, 20, 1.0));
        assert_eq!(t.queries_to_threshold(10.0), Some(0));
        assert_eq!(t.queries_to_threshold(4.5), Some(10));
        assert_eq!(t.queries_to_threshold(-1.0), None);
        assert_eq!(t.without_timing().records[1].elapsed_ms, 0.0);
    }
}
