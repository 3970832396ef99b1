//! Experiment configs, runners and verification suites behind the `zomuon` CLI.

pub mod config;
pub mod experiment;
pub mod verify;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ZOMUON_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "zomuon-out";

/// Output directory precedence: flag, config, environment, built-in default.
pub fn resolve_out_dir(
    flag: Option<&std::path::Path>,
    config: Option<&std::path::Path>,
    env: Option<std::ffi::OsString>,
) -> std::path::PathBuf {
    flag.or(config)
        .map(std::path::Path::to_path_buf)
        .or_else(|| env.filter(|v| !v.is_empty()).map(Into::into))
        .unwrap_or_else(|| DEFAULT_OUT_DIR.into())
}
