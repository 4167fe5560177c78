//! Failures tagged with the process exit code they map to.

use std::fmt;
use std::io;

use ratsir::Error;

pub const CONFIG: u8 = 2;
pub const MISSING_INPUT: u8 = 3;
pub const BAD_DATA: u8 = 4;
pub const OTHER: u8 = 1;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure { code, error: error.into() }
}

/// Exit code for a library error.
pub fn code_of(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => CONFIG,
        Error::DataIntegrity(_) | Error::Json(_) => BAD_DATA,
        Error::Io(io) if io.kind() == io::ErrorKind::NotFound => MISSING_INPUT,
        _ => OTHER,
    }
}

/// Attaches an exit code and context to fallible calls.
pub trait Tag<T> {
    fn tag(self, code: u8, context: &str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn tag(self, code: u8, context: &str) -> CliResult<T> {
        self.map_err(|e| fail(code, e.into().context(context.to_string())))
    }
}

/// Library results keep the code implied by the error kind.
pub trait LibTag<T> {
    fn lib(self, context: &str) -> CliResult<T>;
}

impl<T> LibTag<T> for ratsir::Result<T> {
    fn lib(self, context: &str) -> CliResult<T> {
        self.map_err(|e| {
            let code = code_of(&e);
            fail(code, anyhow::Error::new(e).context(context.to_string()))
        })
    }
}
