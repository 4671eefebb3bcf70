//! Pipeline commands behind the `flowcast` binary.
//!
//! Every command reads a [`RunConfig`], derives its randomness from the
//! master seed and writes plain files under the configured output directory.
//! Running a command twice with the same configuration rewrites identical
//! bytes.

pub mod commands;
pub mod config;
pub mod selftest;

pub use commands::*;
pub use config::{PlacementSpec, RunConfig, Seeds};

/// Bad user input: unreadable or invalid configuration, missing files.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_UNSUPPORTED: i32 = 3;

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use flowcast_core::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() || cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Unsupported(_) => EXIT_UNSUPPORTED,
                E::CaseSyntax { .. }
                | E::InvalidNetwork(_)
                | E::SingularBranch { .. }
                | E::ShuntConductance { .. }
                | E::InvalidParameter(_)
                | E::OutOfServiceChannel { .. }
                | E::Unobservable
                | E::MissingArtifacts(_)
                | E::ConversionMismatch
                | E::Io { .. }
                | E::Format { .. } => EXIT_INPUT,
                _ => EXIT_INTERNAL,
            };
        }
    }
    EXIT_INTERNAL
}
