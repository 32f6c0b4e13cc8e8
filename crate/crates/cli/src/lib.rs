//! Command-line front end: theory and Monte Carlo sweeps, OOD scoring, AUC,
//! NC1 and spectrum reports.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

mod data;
mod sweep;

pub use data::{AucArgs, Nc1Args, ScoreArgs, SpectrumArgs};
pub use sweep::{mc_curve, theory_csv, Manifest, McParams, McSweepArgs, SweepParams, TheorySweepArgs, CURVE_SCHEMA};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable capping the rayon pool (0 or unset = all cores).
pub const THREADS_ENV: &str = "DDLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ddlab",
    version,
    about = "Double-descent risk sweeps, OOD scoring and NC metrics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form risk and OOD-risk bounds over a range of subset sizes.
    TheorySweep(TheorySweepArgs),
    /// Theory columns plus Monte Carlo estimates, with a run manifest.
    McSweep(McSweepArgs),
    /// Post-hoc OOD scores for an evaluation table.
    Score(ScoreArgs),
    /// AUC between ID and OOD score files.
    Auc(AucArgs),
    /// NC1 of a labelled feature table, optionally as an under/over ratio.
    Nc1(Nc1Args),
    /// Explained-variance spectrum of a feature table.
    Spectrum(SpectrumArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameter combinations (exit 2).
    Usage(String),
    /// Unreadable, malformed or unsuitable data (exit 3).
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ddlab::Error> for CliError {
    fn from(e: ddlab::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Reads `DDLAB_THREADS`; `None` means use rayon's default.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(k) => Ok(Some(k)),
            Err(_) => usage(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")),
        },
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::TheorySweep(a) => sweep::theory_sweep(&a),
        Command::McSweep(a) => sweep::mc_sweep(&a),
        Command::Score(a) => data::score(&a),
        Command::Auc(a) => data::auc(&a),
        Command::Nc1(a) => data::nc1(&a),
        Command::Spectrum(a) => data::spectrum(&a),
    }
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub(crate) fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Data(format!("cannot write to stdout: {e}")))
        }
    }
}

pub(crate) fn json_text<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

pub(crate) fn path_string(p: &Path) -> String {
    p.display().to_string()
}

pub(crate) fn default_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
