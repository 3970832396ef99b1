//! Running an experiment and writing its traces and summary.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use zomuon_core::objectives::{
    make_logreg, make_mlp, Dataset, LogisticRegression, Mlp, Objective, ObjectiveError,
    PlantedQuadratic, QuadraticSpec,
};
use zomuon_core::optimizers::{run, OptimizerKind};
use zomuon_core::trace::{Trace, TraceRecord};

use crate::config::{CsvModel, ExperimentConfig, ObjectiveSpec};

pub const TRACE_HEADER: [&str; 4] = ["step", "queries", "loss", "elapsed_ms"];

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("objective: {0}")]
    Objective(#[from] ObjectiveError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("trace csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace csv line {line}: {message}")]
    TraceFormat { line: u64, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Builds a fresh objective (with its own query counter).
pub fn build_objective(spec: &ObjectiveSpec) -> Result<Box<dyn Objective>, HarnessError> {
    Ok(match spec {
        ObjectiveSpec::Quadratic {
            rows,
            cols,
            rank,
            condition,
            ridge,
            target_scale,
            seed,
        } => Box::new(PlantedQuadratic::new(
            &QuadraticSpec::new(*rows, *cols, *rank, *seed)
                .condition(*condition)
                .ridge(*ridge)
                .target_scale(*target_scale),
        )?),
        ObjectiveSpec::Logreg {
            samples,
            features,
            seed,
        } => Box::new(make_logreg(*samples, *features, *seed)?),
        ObjectiveSpec::Mlp {
            widths,
            samples,
            seed,
        } => Box::new(make_mlp(widths, *samples, *seed)?),
        ObjectiveSpec::Csv {
            path,
            model,
            hidden,
            seed,
        } => {
            let data = Dataset::from_csv_path(path)?;
            match model {
                CsvModel::Logreg => Box::new(LogisticRegression::from_dataset(&data)?),
                CsvModel::Mlp => Box::new(Mlp::from_dataset(&data, hidden, *seed)?),
            }
        }
    })
}

/// A loss threshold, either absolute or relative to the initial loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub value: f64,
    /// Set when `value = relative × initial loss`.
    pub relative: Option<f64>,
}

impl Threshold {
    pub fn label(&self) -> String {
        match self.relative {
            Some(r) => format!("{r}x initial"),
            None => format!("{}", self.value),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub label: String,
    pub kind: OptimizerKind,
    pub steps: u64,
    pub queries_per_step: u64,
    pub trace: Trace,
    pub error: Option<String>,
}

impl RunResult {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }

    pub fn final_queries(&self) -> u64 {
        self.trace.last().map_or(0, |r| r.queries)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub initial_loss: f64,
    pub thresholds: Vec<Threshold>,
    pub runs: Vec<RunResult>,
}

impl ExperimentResult {
    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.error.is_some())
    }
}

/// Runs every optimizer in parallel, each against its own objective
/// instance and with the experiment seed as RNG root.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let probe = build_objective(&cfg.objective)?;
    let initial_loss = probe.loss(&probe.initial_point());
    let mut thresholds: Vec<Threshold> = cfg
        .thresholds
        .iter()
        .map(|&value| Threshold {
            value,
            relative: None,
        })
        .collect();
    thresholds.extend(cfg.relative_thresholds.iter().map(|&r| Threshold {
        value: r * initial_loss,
        relative: Some(r),
    }));

    let runs = cfg
        .optimizers
        .par_iter()
        .map(|spec| -> Result<RunResult, HarnessError> {
            let obj = build_objective(&cfg.objective)?;
            let steps = spec.config.steps_for_budget(spec.kind, cfg.budget);
            let oc = spec.config.clone().total_steps(steps);
            let (trace, error) = match run(
                obj.as_ref(),
                &obj.initial_point(),
                &oc,
                spec.kind,
                cfg.seed,
                cfg.eval_every,
            ) {
                Ok(out) => (out.trace, None),
                Err(fail) => {
                    log::error!("{}: {}", spec.label, fail);
                    (fail.trace, Some(fail.error.to_string()))
                }
            };
            Ok(RunResult {
                label: spec.label.clone(),
                kind: spec.kind,
                steps,
                queries_per_step: oc.queries_per_step(spec.kind),
                trace,
                error,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExperimentResult {
        initial_loss,
        thresholds,
        runs,
    })
}

pub fn write_trace<W: Write>(w: W, trace: &Trace) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        out.write_record([
            r.step.to_string(),
            r.queries.to_string(),
            r.loss.to_string(),
            r.elapsed_ms.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace<R: Read>(r: R) -> Result<Trace, HarnessError> {
    let mut reader = csv::Reader::from_reader(r);
    if reader.headers()?.iter().ne(TRACE_HEADER) {
        return Err(HarnessError::TraceFormat {
            line: 1,
            message: format!("expected header {}", TRACE_HEADER.join(",")),
        });
    }
    let mut trace = Trace::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |field: &str| HarnessError::TraceFormat {
            line,
            message: format!("bad {field} value"),
        };
        if row.len() != 4 {
            return Err(HarnessError::TraceFormat {
                line,
                message: format!("expected 4 fields, got {}", row.len()),
            });
        }
        trace.push(TraceRecord {
            step: row[0].parse().map_err(|_| bad("step"))?,
            queries: row[1].parse().map_err(|_| bad("queries"))?,
            loss: row[2].parse().map_err(|_| bad("loss"))?,
            elapsed_ms: row[3].parse().map_err(|_| bad("elapsed_ms"))?,
        });
    }
    trace.eval_queries = trace.len() as u64;
    Ok(trace)
}

pub fn trace_file_name(experiment: &str, label: &str) -> String {
    format!("{experiment}_{label}.csv")
}

#[derive(Serialize)]
struct RunSummary<'a> {
    label: &'a str,
    kind: &'a str,
    steps: u64,
    queries_per_step: u64,
    final_queries: u64,
    final_loss: Option<f64>,
    /// One entry per threshold, in summary order; `null` when not reached.
    queries_to_threshold: Vec<Option<u64>>,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    seed: u64,
    budget: u64,
    eval_every: u64,
    initial_loss: f64,
    thresholds: &'a [Threshold],
    runs: Vec<RunSummary<'a>>,
    config: &'a crate::config::RawConfig,
}

pub fn summary_json(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
) -> Result<String, HarnessError> {
    let runs = result
        .runs
        .iter()
        .map(|r| RunSummary {
            label: &r.label,
            kind: r.kind.name(),
            steps: r.steps,
            queries_per_step: r.queries_per_step,
            final_queries: r.final_queries(),
            final_loss: r.final_loss(),
            queries_to_threshold: result
                .thresholds
                .iter()
                .map(|t| r.trace.queries_to_threshold(t.value))
                .collect(),
            error: r.error.as_deref(),
        })
        .collect();
    let summary = Summary {
        experiment: &cfg.name,
        seed: cfg.seed,
        budget: cfg.budget,
        eval_every: cfg.eval_every,
        initial_loss: result.initial_loss,
        thresholds: &result.thresholds,
        runs,
        config: &cfg.raw,
    };
    Ok(serde_json::to_string_pretty(&summary)? + "\n")
}

/// Writes one trace CSV per run, then `summary.json`.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for r in &result.runs {
        let path = dir.join(trace_file_name(&cfg.name, &r.label));
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        write_trace(std::io::BufWriter::new(file), &r.trace)?;
        written.push(path);
    }
    let path = dir.join("summary.json");
    std::fs::write(&path, summary_json(cfg, result)?).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// Queries-to-threshold table, with ratios against the first MeZO run.
pub fn compare_table(result: &ExperimentResult) -> String {
    let reference = result.runs.iter().find(|r| r.kind == OptimizerKind::Mezo);
    let label_w = result
        .runs
        .iter()
        .map(|r| r.label.len())
        .max()
        .unwrap_or(0)
        .max(9);
    let mut s = String::new();
    let _ = writeln!(s, "initial loss {:.6e}", result.initial_loss);
    for t in &result.thresholds {
        let _ = writeln!(s, "\nthreshold {} (loss <= {:.6e})", t.label(), t.value);
        let _ = writeln!(
            s,
            "{:<label_w$}  {:>7}  {:>13}  {:>12}  {:>10}",
            "optimizer", "steps", "final loss", "queries", "vs mezo"
        );
        let ref_q = reference.and_then(|r| r.trace.queries_to_threshold(t.value));
        for r in &result.runs {
            let q = r.trace.queries_to_threshold(t.value);
            let queries = q.map_or_else(|| "not reached".to_string(), |q| q.to_string());
            let ratio = match (q, ref_q) {
                (Some(a), Some(b)) if b > 0 => format!("{:.3}", a as f64 / b as f64),
                (Some(0), Some(0)) => "1.000".to_string(),
                _ => "-".to_string(),
            };
            let loss = r
                .final_loss()
                .map_or_else(|| "-".to_string(), |l| format!("{l:.6e}"));
            let _ = writeln!(
                s,
                "{:<label_w$}  {:>7}  {:>13}  {:>12}  {:>10}",
                r.label, r.steps, loss, queries, ratio
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_round_trips_exactly() {
        let mut t = Trace::new();
        for (i, loss) in [1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE]
            .into_iter()
            .enumerate()
        {
            t.push(TraceRecord {
                step: i as u64 * 10,
                queries: i as u64 * 20,
                loss,
                elapsed_ms: 0.1 * i as f64,
            });
        }
        t.eval_queries = 4;
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        assert!(buf.starts_with(b"step,queries,loss,elapsed_ms\n"));
        assert_eq!(read_trace(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn bad_trace_rows_are_located() {
        let text = "step,queries,loss,elapsed_ms\n0,0,1.0,0\n1,x,1.0,0\n";
        let err = read_trace(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("queries"), "{err}");
        assert!(read_trace("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn table_marks_unreached_thresholds() {
        let rec = |q, loss| TraceRecord {
            step: q / 2,
            queries: q,
            loss,
            elapsed_ms: 0.0,
        };
        let trace = |rs: Vec<TraceRecord>| Trace {
            records: rs,
            eval_queries: 0,
        };
        let result = ExperimentResult {
            initial_loss: 1.0,
            thresholds: vec![Threshold {
                value: 0.5,
                relative: Some(0.5),
            }],
            runs: vec![
                RunResult {
                    label: "mezo".into(),
                    kind: OptimizerKind::Mezo,
                    steps: 2,
                    queries_per_step: 2,
                    trace: trace(vec![rec(0, 1.0), rec(4, 0.4)]),
                    error: None,
                },
                RunResult {
                    label: "muon".into(),
                    kind: OptimizerKind::ZoMuon,
                    steps: 1,
                    queries_per_step: 5,
                    trace: trace(vec![rec(0, 1.0), rec(5, 0.9)]),
                    error: None,
                },
            ],
        };
        let table = compare_table(&result);
        assert!(table.contains("not reached"), "{table}");
        assert!(
            table
                .lines()
                .any(|l| l.starts_with("mezo") && l.ends_with("1.000")),
            "{table}"
        );
    }
}
