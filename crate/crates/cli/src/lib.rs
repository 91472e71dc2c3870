//! Support code for the `braille` command-line tool: exit-code mapping and
//! the HTTP annotation service.

pub mod service;

use std::fmt;

/// A problem with the command line or its inputs; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

/// Exit code for a failed command: 2 when the cause is bad input or
/// arguments, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use braille_core::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Training(_) => EXIT_INTERNAL,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_INTERNAL
}
