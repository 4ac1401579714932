//! Subcommand pipeline around the `seghash` library.
//!
//! Every subcommand writes its outputs and a [`manifest::RunManifest`] under
//! `--out`. Exit codes: 0 success, 1 user error, 2 internal error.

pub mod args;
pub mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Cmd};
use manifest::RunManifest;

pub const THREADS_ENV: &str = "SEGHASH_THREADS";

/// A failure caused by the invocation rather than by the program.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    User = 1,
    Internal = 2,
}

/// Classifies an error chain: bad arguments, inputs and files are the user's;
/// everything else, including numerical breakdown, is internal.
pub fn classify(err: &anyhow::Error) -> Exit {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return Exit::User;
        }
        if let Some(e) = cause.downcast_ref::<seghash::Error>() {
            return match e {
                seghash::Error::NonFinite { .. } => Exit::Internal,
                _ => Exit::User,
            };
        }
    }
    Exit::Internal
}

/// Worker cap from `SEGHASH_THREADS`; the pipeline itself runs on one thread.
pub fn thread_cap() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(UsageError(format!("{THREADS_ENV}={v:?} must be a positive integer")).into()),
        },
        Err(e) => Err(UsageError(format!("{THREADS_ENV}: {e}")).into()),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> Exit
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::User } else { Exit::Ok };
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|s| s.to_string_lossy().into_owned()).collect();
    let outcome = std::panic::catch_unwind(|| execute(cli.command, recorded));
    match outcome {
        Ok(Ok(())) => Exit::Ok,
        Ok(Err(e)) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            classify(&e)
        }
        Err(_) => Exit::Internal,
    }
}

fn execute(cmd: Cmd, argv: Vec<String>) -> Result<()> {
    let threads = thread_cap()?;
    if let Cmd::Replay(r) = cmd {
        return replay(&r.manifest, &r.out);
    }
    dispatch(cmd, argv, threads)
}

fn dispatch(cmd: Cmd, argv: Vec<String>, threads: usize) -> Result<()> {
    let mut m = RunManifest::new(cmd.name(), argv, threads);
    let out = match &cmd {
        Cmd::Synth(a) => &a.out,
        Cmd::Pretrain(a) => &a.out,
        Cmd::Align(a) => &a.out,
        Cmd::BuildIndex(a) => &a.out,
        Cmd::Query(a) => &a.out,
        Cmd::Eval(a) => &a.out,
        Cmd::Bench(a) => &a.out,
        Cmd::Replay(a) => &a.out,
    }
    .clone();
    commands::ensure_out(&out)?;
    match &cmd {
        Cmd::Synth(a) => commands::synth(a, &out, &mut m)?,
        Cmd::Pretrain(a) => commands::pretrain(a, &out, &mut m)?,
        Cmd::Align(a) => commands::align(a, &out, &mut m)?,
        Cmd::BuildIndex(a) => commands::build_index(a, &out, &mut m)?,
        Cmd::Query(a) => commands::query(a, &out, &mut m)?,
        Cmd::Eval(a) => commands::eval(a, &out, &mut m)?,
        Cmd::Bench(a) => commands::bench(a, &out, &mut m)?,
        Cmd::Replay(_) => unreachable!("replay is handled before dispatch"),
    }
    m.write(&out)
}

/// Re-runs a recorded command, resolving its relative paths against the
/// recorded working directory and writing into `out` instead.
fn replay(manifest: &Path, out: &Path) -> Result<()> {
    let m = RunManifest::load(manifest).map_err(|e| UsageError(format!("{e:#}")))?;
    let out = absolute(out)?;
    let mut argv = vec![OsString::from("seghash")];
    argv.extend(m.argv.iter().map(OsString::from));
    let mut cli =
        Cli::try_parse_from(&argv).map_err(|e| UsageError(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Cmd::Replay(_)) {
        return Err(UsageError("a replay manifest cannot be replayed".into()).into());
    }
    *cli.command.out_mut() = out;
    std::env::set_current_dir(&m.cwd).with_context(|| format!("entering recorded directory {}", m.cwd.display()))?;
    log::info!("replaying {} from {}", m.command, manifest.display());
    dispatch(cli.command, m.argv, m.threads)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir()?.join(p)
    })
}
