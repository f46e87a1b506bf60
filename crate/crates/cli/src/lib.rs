//! Library side of the `factmark` command-line tool: argument definitions,
//! configuration, file formats and one module per subcommand.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod schema;

use std::fmt;

/// A problem with the invocation, configuration or input files (exit code 2),
/// as opposed to an internal failure (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// `anyhow::Error` wrapping a [`UsageError`] built with `format!` syntax.
#[macro_export]
macro_rules! usage {
    ($($arg:tt)*) => {
        ::anyhow::Error::new($crate::UsageError(format!($($arg)*)))
    };
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Usage errors and configuration/input errors from the library map to 2;
/// everything else is an internal failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<factmark::Error>() {
            return match e {
                factmark::Error::Config(_)
                | factmark::Error::Input(_)
                | factmark::Error::Unsupported(_) => EXIT_USAGE,
                _ => EXIT_INTERNAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return EXIT_USAGE;
            }
        }
    }
    EXIT_INTERNAL
}

pub fn run(cli: args::Cli) -> anyhow::Result<()> {
    commands::dispatch(cli)
}
