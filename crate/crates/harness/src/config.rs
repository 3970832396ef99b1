//! Experiment configuration files.
//!
//! A config is TOML with three kinds of section:
//!
//! ```toml
//! [experiment]
//! name = "quadratic"
//! seed = 0
//! budget = 20000            # estimation queries per optimizer
//! eval_every = 10           # steps between loss records
//! thresholds = [1.0]        # absolute loss thresholds (optional)
//! relative_thresholds = [0.01]  # multiples of the initial loss (optional)
//! output_dir = "results"    # optional
//!
//! [objective]
//! kind = "quadratic"        # quadratic | logreg | mlp | csv
//! rows = 64
//! cols = 64
//! rank = 8
//!
//! [[optimizer]]
//! label = "zo-muon"         # defaults to the kind
//! kind = "zo-muon"          # mezo | subspace-mezo | lozo | zo-muon
//! learning_rate = 0.2
//! n_queries = 4
//! ```
//!
//! Every other optimizer key is optional and falls back to the kind's
//! defaults: `mu`, `rank`, `resample_interval`, `msign` (`svd` | `ns`),
//! `ns_iterations`, `ns_schedule` (`convergent` | `muon-quintic`),
//! `projection` (`random` | `sketching`), `sketch_beta`, `scheme`
//! (`forward` | `central`), `parallel`.
//!
//! Objective keys by kind:
//! - `quadratic`: `rows`, `cols`, `rank`, `condition` (1), `ridge` (1e-4), `target_scale` (1)
//! - `logreg`: `samples`, `features`
//! - `mlp`: `widths` (e.g. `[8, 32, 4]`), `samples`
//! - `csv`: `path`, `model` (`logreg` | `mlp`), `hidden` (mlp only, e.g. `[32]`)
//!
//! `seed` under `[objective]` overrides the experiment seed for data generation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use zomuon_core::estimators::DiffScheme;
use zomuon_core::linalg::NsSchedule;
use zomuon_core::optimizers::{MsignBackend, OptimizerConfig, OptimizerKind, ProjectionStrategy};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}:{line}: field `{field}`: {message}")]
    Field {
        path: String,
        line: usize,
        field: String,
        message: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub budget: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub relative_thresholds: Vec<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_eval_every() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    pub kind: Spanned<String>,
    pub seed: Option<u64>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub rank: Option<usize>,
    pub condition: Option<f64>,
    pub ridge: Option<f64>,
    pub target_scale: Option<f64>,
    pub samples: Option<usize>,
    pub features: Option<usize>,
    pub widths: Option<Vec<usize>>,
    pub path: Option<PathBuf>,
    pub model: Option<String>,
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub label: Option<String>,
    pub kind: Spanned<String>,
    pub learning_rate: Option<f64>,
    pub mu: Option<f64>,
    pub n_queries: Option<usize>,
    pub rank: Option<usize>,
    pub resample_interval: Option<u64>,
    pub msign: Option<Spanned<String>>,
    pub ns_iterations: Option<usize>,
    pub ns_schedule: Option<Spanned<String>>,
    pub projection: Option<Spanned<String>>,
    pub sketch_beta: Option<f64>,
    pub scheme: Option<Spanned<String>>,
    pub parallel: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: ExperimentSection,
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub optimizer: Vec<OptimizerSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveSpec {
    Quadratic {
        rows: usize,
        cols: usize,
        rank: usize,
        condition: f64,
        ridge: f64,
        target_scale: f64,
        seed: u64,
    },
    Logreg {
        samples: usize,
        features: usize,
        seed: u64,
    },
    Mlp {
        widths: Vec<usize>,
        samples: usize,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        model: CsvModel,
        hidden: Vec<usize>,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsvModel {
    Logreg,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub label: String,
    pub kind: OptimizerKind,
    /// `total_steps` is left at 0; the runner derives it from the budget.
    pub config: OptimizerConfig,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub budget: u64,
    pub eval_every: u64,
    pub thresholds: Vec<f64>,
    pub relative_thresholds: Vec<f64>,
    pub output_dir: Option<PathBuf>,
    pub objective: ObjectiveSpec,
    pub optimizers: Vec<OptimizerSpec>,
    /// The parsed file, echoed into summary.json.
    pub raw: RawConfig,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse(&text, &path.display().to_string())?;
    // relative CSV paths are resolved against the config file
    if let ObjectiveSpec::Csv { path: data, .. } = &mut cfg.objective {
        if data.is_relative() {
            if let Some(dir) = path.parent() {
                *data = dir.join(&*data);
            }
        }
    }
    Ok(cfg)
}

/// Parses and validates config text. `origin` names the source in diagnostics.
pub fn parse(text: &str, origin: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let cx = Context { text, origin };
    validate(raw, &cx)
}

struct Context<'a> {
    text: &'a str,
    origin: &'a str,
}

impl Context<'_> {
    fn line_of(&self, offset: usize) -> usize {
        self.text[..offset.min(self.text.len())]
            .matches('\n')
            .count()
            + 1
    }

    /// Line of the first `key =` inside the `index`-th occurrence of `[section]`.
    fn line_of_key(&self, section: &str, index: usize, key: &str) -> usize {
        let header = format!("[{section}]");
        let mut seen = 0usize;
        let mut inside = false;
        let mut header_line = 1;
        for (i, line) in self.text.lines().enumerate() {
            let t = line.trim();
            if t.starts_with('[') {
                inside = t == header || t == format!("[{header}]");
                if inside {
                    seen += 1;
                    header_line = i + 1;
                }
                continue;
            }
            if inside && seen == index + 1 {
                let k = t.split('=').next().unwrap_or("").trim();
                if k == key {
                    return i + 1;
                }
            }
        }
        header_line
    }

    fn err(&self, line: usize, field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Field {
            path: self.origin.to_string(),
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn spanned_err<T>(
        &self,
        s: &Spanned<T>,
        field: &str,
        message: impl Into<String>,
    ) -> ConfigError {
        self.err(self.line_of(s.span().start), field, message)
    }
}

fn validate(raw: RawConfig, cx: &Context<'_>) -> Result<ExperimentConfig, ConfigError> {
    let e = &raw.experiment;
    let exp_err = |key: &str, msg: String| {
        cx.err(
            cx.line_of_key("experiment", 0, key),
            &format!("experiment.{key}"),
            msg,
        )
    };
    if e.name.is_empty() || e.name.contains(['/', '\\']) {
        return Err(exp_err(
            "name",
            format!(
                "must be a non-empty file-name-safe string, got {:?}",
                e.name
            ),
        ));
    }
    if e.budget == 0 {
        return Err(exp_err("budget", "must be a positive integer".into()));
    }
    if e.eval_every == 0 {
        return Err(exp_err("eval_every", "must be a positive integer".into()));
    }
    if let Some(t) = e.thresholds.iter().find(|t| !t.is_finite()) {
        return Err(exp_err("thresholds", format!("must be finite, got {t}")));
    }
    if let Some(t) = e
        .relative_thresholds
        .iter()
        .find(|t| !(t.is_finite() && **t > 0.0))
    {
        return Err(exp_err(
            "relative_thresholds",
            format!("must be positive, got {t}"),
        ));
    }
    if raw.optimizer.is_empty() {
        return Err(cx.err(
            1,
            "optimizer",
            "at least one [[optimizer]] section is required",
        ));
    }

    let objective = objective_spec(&raw.objective, e.seed, cx)?;
    let mut optimizers = Vec::with_capacity(raw.optimizer.len());
    for (i, o) in raw.optimizer.iter().enumerate() {
        let spec = optimizer_spec(o, i, cx)?;
        if optimizers
            .iter()
            .any(|p: &OptimizerSpec| p.label == spec.label)
        {
            return Err(cx.err(
                cx.line_of_key("optimizer", i, "label"),
                &format!("optimizer[{i}].label"),
                format!("duplicate label {:?}", spec.label),
            ));
        }
        optimizers.push(spec);
    }

    Ok(ExperimentConfig {
        name: e.name.clone(),
        seed: e.seed,
        budget: e.budget,
        eval_every: e.eval_every,
        thresholds: e.thresholds.clone(),
        relative_thresholds: e.relative_thresholds.clone(),
        output_dir: e.output_dir.clone(),
        objective,
        optimizers,
        raw,
    })
}

fn objective_spec(
    o: &ObjectiveSection,
    experiment_seed: u64,
    cx: &Context<'_>,
) -> Result<ObjectiveSpec, ConfigError> {
    let seed = o.seed.unwrap_or(experiment_seed);
    let missing = |key: &str| {
        cx.spanned_err(
            &o.kind,
            &format!("objective.{key}"),
            format!("required for kind {:?}", o.kind.get_ref()),
        )
    };
    let positive = |key: &str, v: Option<usize>| -> Result<usize, ConfigError> {
        match v {
            None => Err(missing(key)),
            Some(0) => Err(cx.err(
                cx.line_of_key("objective", 0, key),
                &format!("objective.{key}"),
                "must be positive",
            )),
            Some(v) => Ok(v),
        }
    };
    Ok(match o.kind.get_ref().as_str() {
        "quadratic" => ObjectiveSpec::Quadratic {
            rows: positive("rows", o.rows)?,
            cols: positive("cols", o.cols)?,
            rank: positive("rank", o.rank)?,
            condition: o.condition.unwrap_or(1.0),
            ridge: o.ridge.unwrap_or(1e-4),
            target_scale: o.target_scale.unwrap_or(1.0),
            seed,
        },
        "logreg" => ObjectiveSpec::Logreg {
            samples: positive("samples", o.samples)?,
            features: positive("features", o.features)?,
            seed,
        },
        "mlp" => ObjectiveSpec::Mlp {
            widths: o.widths.clone().ok_or_else(|| missing("widths"))?,
            samples: positive("samples", o.samples)?,
            seed,
        },
        "csv" => {
            let model = match o.model.as_deref().unwrap_or("logreg") {
                "logreg" => CsvModel::Logreg,
                "mlp" => CsvModel::Mlp,
                other => {
                    return Err(cx.err(
                        cx.line_of_key("objective", 0, "model"),
                        "objective.model",
                        format!("unknown model {other:?}; valid: logreg, mlp"),
                    ))
                }
            };
            ObjectiveSpec::Csv {
                path: o.path.clone().ok_or_else(|| missing("path"))?,
                model,
                hidden: o.hidden.clone().unwrap_or_default(),
                seed,
            }
        }
        other => {
            return Err(cx.spanned_err(
                &o.kind,
                "objective.kind",
                format!("unknown objective kind {other:?}; valid: quadratic, logreg, mlp, csv"),
            ))
        }
    })
}

fn optimizer_spec(
    o: &OptimizerSection,
    i: usize,
    cx: &Context<'_>,
) -> Result<OptimizerSpec, ConfigError> {
    let field = |key: &str| format!("optimizer[{i}].{key}");
    let kind: OptimizerKind = o
        .kind
        .get_ref()
        .parse()
        .map_err(|msg: String| cx.spanned_err(&o.kind, &field("kind"), msg))?;
    let mut c = OptimizerConfig::defaults(kind);
    if let Some(v) = o.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = o.mu {
        c.mu = v;
    }
    if let Some(v) = o.n_queries {
        c.n_queries = v;
    }
    if let Some(v) = o.rank {
        c.rank = v;
    }
    if let Some(v) = o.resample_interval {
        c.resample_interval = v;
    }
    if let Some(s) = &o.msign {
        c.msign_backend = s
            .get_ref()
            .parse::<MsignBackend>()
            .map_err(|m| cx.spanned_err(s, &field("msign"), m))?;
    }
    if let Some(v) = o.ns_iterations {
        c.ns_iterations = v;
    }
    if let Some(s) = &o.ns_schedule {
        c.ns_schedule = match s.get_ref().as_str() {
            "convergent" => NsSchedule::Convergent,
            "muon-quintic" => NsSchedule::MuonQuintic,
            other => {
                return Err(cx.spanned_err(
                    s,
                    &field("ns_schedule"),
                    format!("unknown schedule {other:?}; valid: convergent, muon-quintic"),
                ))
            }
        };
    }
    if let Some(s) = &o.projection {
        c.projection_strategy = s
            .get_ref()
            .parse::<ProjectionStrategy>()
            .map_err(|m| cx.spanned_err(s, &field("projection"), m))?;
    }
    if let Some(v) = o.sketch_beta {
        c.sketch_momentum_beta = v;
    }
    if let Some(s) = &o.scheme {
        c.scheme = Some(match s.get_ref().as_str() {
            "forward" => DiffScheme::Forward,
            "central" => DiffScheme::Central,
            other => {
                return Err(cx.spanned_err(
                    s,
                    &field("scheme"),
                    format!("unknown scheme {other:?}; valid: forward, central"),
                ))
            }
        });
    }
    if let Some(v) = o.parallel {
        c.parallel = v;
    }
    c.validate(kind)
        .map_err(|e| cx.spanned_err(&o.kind, &format!("optimizer[{i}]"), e.to_string()))?;
    let label = o.label.clone().unwrap_or_else(|| kind.name().to_string());
    if label.is_empty() || label.contains(['/', '\\']) {
        return Err(cx.err(
            cx.line_of_key("optimizer", i, "label"),
            &field("label"),
            format!("must be a non-empty file-name-safe string, got {label:?}"),
        ));
    }
    Ok(OptimizerSpec {
        label,
        kind,
        config: c,
    })
}
