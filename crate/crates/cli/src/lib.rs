//! The `gqnloc` command line: dataset generation, training, sampling,
//! localization, evaluation and attention plots. Every command writes its
//! artifacts and a `manifest.json` into one output directory.

pub mod args;
pub mod cmd;
pub mod error;
pub mod manifest;
pub mod ppm;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

pub use args::{Cli, Command};
pub use error::{CliError, Result};

/// Environment variable naming the root for default output directories.
pub const OUT_ENV: &str = "GQNLOC_OUT";

/// Parses and runs one invocation, printing errors, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command. `args` are the raw arguments recorded in the manifest.
pub fn execute(cli: Cli, args: &[String]) -> Result<()> {
    if cli.sequential {
        gqnloc_nn::Parallelism::set_global(gqnloc_nn::Parallelism::Sequential);
    }
    match cli.command {
        Command::GenData(a) => cmd::gen_data::run(a, args),
        Command::Train(a) => cmd::train::run(a, args),
        Command::Sample(a) => cmd::sample::run(a, args),
        Command::Localize(a) => cmd::localize::run(a, args),
        Command::Eval(a) => cmd::eval::run(a, args),
        Command::VizAttention(a) => cmd::viz::run(a, args),
        Command::Overfit(a) => cmd::overfit::run(a, args),
        Command::Replay(a) => cmd::replay::run(a),
    }
}

/// `--out` if given, else `$GQNLOC_OUT/<command>`, else `./gqnloc-out/<command>`.
pub fn resolve_out(out: Option<&Path>, command: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("gqnloc-out"));
            root.join(command)
        }
    }
}
