//! Command-line driver: analytic sweeps, figure data, privacy games, exact
//! oracles, retrieval demos and a database server.
//!
//! Exit codes: 0 success, 1 assertion failure, 2 usage, 3 capability.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::Parser;

pub mod args;
pub mod commands;
pub mod grid;
pub mod table;

pub use args::Cli;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    Usage(String),
    Assertion(String),
    Capability(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Assertion(_) | Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Capability(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Assertion(m) => write!(f, "assertion failed: {m}"),
            Failure::Capability(m) => write!(f, "not supported: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<epir::Error> for Failure {
    fn from(e: epir::Error) -> Self {
        use epir::Error as E;
        match e {
            E::Parameter(_) | E::Contract(_) => Failure::Usage(e.to_string()),
            E::Size(_) | E::Unsupported(_) => Failure::Capability(e.to_string()),
            E::Reconstruction(_) => Failure::Assertion(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the command, writing results
/// to `out` and diagnostics to `err`. Returns the process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match commands::execute(&cli, out, err) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "{f}");
            f.exit_code()
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}
