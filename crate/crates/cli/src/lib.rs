//! The `flowgnn` command-line tool.
//!
//! [`dispatch`] parses arguments, merges `--config` files with flags, runs
//! the subcommand and appends a [`RunManifest`] to `manifest.json` in the
//! output directory.

mod args;
pub mod config;
mod manifest;
mod run;

use std::ffi::OsString;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

pub use args::{Cli, Command};
pub use manifest::{FileDigest, ManifestFile, RunManifest, MANIFEST_FILE, MANIFEST_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<flowgnn::Error> for CliError {
    fn from(e: flowgnn::Error) -> Self {
        use flowgnn::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Shape { .. } | E::MissingGrad(_) | E::UnknownParam(_) => CliError::Runtime(msg),
            E::Csv(_)
            | E::Json(_)
            | E::Schema(_)
            | E::CorruptInput { .. }
            | E::Config(_)
            | E::InvalidInput(_)
            | E::Incompatible(_)
            | E::Format(_) => CliError::Validation(msg),
        }
    }
}

fn resolve<T, A>(config: Option<&std::path::Path>, name: &str, apply: A) -> Result<T, CliError>
where
    T: Default + serde::de::DeserializeOwned,
    A: FnOnce(&mut T),
{
    let mut cfg = match config {
        Some(p) => config::load(p, name)?,
        None => T::default(),
    };
    apply(&mut cfg);
    Ok(cfg)
}

fn execute<T: Serialize>(
    name: &str,
    cfg: &T,
    f: impl FnOnce(&T) -> Result<run::Done, CliError>,
) -> Result<(), CliError> {
    let started_at = manifest::now();
    let done = f(cfg)?;
    let digests = |paths: &[std::path::PathBuf]| -> Result<Vec<FileDigest>, CliError> {
        paths.iter().map(|p| FileDigest::of(p)).collect()
    };
    let record = RunManifest {
        subcommand: name.to_string(),
        config: serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.to_string()))?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: done.master_seed,
        inputs: digests(&done.inputs)?,
        outputs: digests(&done.outputs)?,
        started_at,
        finished_at: manifest::now(),
    };
    manifest::append_run(&done.dir, record)?;
    let _ = writeln!(std::io::stdout(), "{name}: {}", done.summary);
    Ok(())
}

/// Run a parsed subcommand.
pub fn run_command(command: &Command) -> Result<(), CliError> {
    let name = command.name();
    match command {
        Command::Synth(a) => execute(name, &resolve(a.config.as_deref(), name, |c| a.apply(c))?, run::synth),
        Command::Ingest(a) => execute(name, &resolve(a.config.as_deref(), name, |c| a.apply(c))?, run::ingest),
        Command::BuildGraphs(a) => execute(
            name,
            &resolve(a.config.as_deref(), name, |c| a.apply(c))?,
            run::build_graphs,
        ),
        Command::Pretrain(a) => execute(
            name,
            &resolve(a.config.as_deref(), name, |c| a.apply(c))?,
            run::pretrain_cmd,
        ),
        Command::Finetune(a) => execute(
            name,
            &resolve(a.config.as_deref(), name, |c| a.apply(c))?,
            run::finetune_cmd,
        ),
        Command::Evaluate(a) => execute(
            name,
            &resolve(a.config.as_deref(), name, |c| a.apply(c))?,
            run::evaluate,
        ),
        Command::Fewshot(a) => execute(name, &resolve(a.config.as_deref(), name, |c| a.apply(c))?, run::fewshot),
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::parse(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(std::io::stdout(), "{}", e.render());
                    0
                }
                _ => {
                    let err = args::usage_error(&e);
                    eprint!("{err}");
                    err.exit_code()
                }
            };
        }
    };
    match run_command(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
