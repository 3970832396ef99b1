use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zomuon_harness::config::{self, ExperimentConfig};
use zomuon_harness::experiment::{compare_table, run_experiment, write_outputs, ExperimentResult};
use zomuon_harness::verify::{run_suite, SUITES};
use zomuon_harness::{resolve_out_dir, OUT_DIR_ENV};

/// Zeroth-order optimizer comparisons on synthetic objectives.
#[derive(Parser)]
#[command(name = "zomuon", version)]
struct Cli {
    /// Override the experiment seed (or the verification seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Falls back to the config's output_dir, then $ZOMUON_OUT_DIR, then ./zomuon-out.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Steps between recorded losses (overrides the config).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    eval_every: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every optimizer in a config and write trace CSVs and summary.json.
    Run { config: PathBuf },
    /// Like `run`, then print queries-to-threshold per optimizer.
    Compare { config: PathBuf },
    /// Run oracle checks.
    Verify {
        #[arg(value_parser = SUITES)]
        suite: String,
    },
}

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, ExitCode> {
    let mut cfg = config::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_USAGE)
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.raw.experiment.seed = seed;
    }
    if let Some(every) = cli.eval_every {
        cfg.eval_every = every;
        cfg.raw.experiment.eval_every = every;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> Result<ExperimentResult, ExitCode> {
    let dir = resolve_out_dir(
        cli.out_dir.as_deref(),
        cfg.output_dir.as_deref(),
        std::env::var_os(OUT_DIR_ENV),
    );
    let result = run_experiment(cfg).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_FAILED)
    })?;
    let written = write_outputs(cfg, &result, &dir).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_FAILED)
    })?;
    for r in &result.runs {
        let loss = r
            .final_loss()
            .map_or_else(|| "-".into(), |l| format!("{l:.6e}"));
        println!(
            "{:<16} {:>7} steps  {:>9} queries  final loss {}",
            r.label,
            r.steps,
            r.final_queries(),
            loss
        );
        if let Some(e) = &r.error {
            eprintln!("error: {} failed: {e}", r.label);
        }
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(result)
}

fn finish(result: &ExperimentResult) -> ExitCode {
    if result.failed() {
        ExitCode::from(EXIT_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config } => load(&cli, config).and_then(|cfg| execute(&cli, &cfg)).map(|r| finish(&r)),
        Command::Compare { config } => load(&cli, config).and_then(|cfg| {
            if cfg.thresholds.is_empty() && cfg.relative_thresholds.is_empty() {
                eprintln!(
                    "error: {}: compare needs `thresholds` or `relative_thresholds` under [experiment]",
                    config.display()
                );
                return Err(ExitCode::from(EXIT_USAGE));
            }
            let result = execute(&cli, &cfg)?;
            print!("{}", compare_table(&result));
            Ok(finish(&result))
        }),
        Command::Verify { suite } => {
            let mut stdout = std::io::stdout().lock();
            match run_suite(suite, cli.seed.unwrap_or(0), &mut stdout) {
                None => Ok(ExitCode::from(EXIT_USAGE)),
                Some(Err(e)) => {
                    eprintln!("error: {e}");
                    Ok(ExitCode::from(EXIT_FAILED))
                }
                Some(Ok(checks)) => {
                    let failed = checks.iter().filter(|c| !c.pass).count();
                    println!("{} checks, {} failed", checks.len(), failed);
                    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILED) })
                }
            }
        }
    };
    outcome.unwrap_or_else(|code| code)
}
