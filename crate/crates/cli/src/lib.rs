//! Library side of the `disco` binary: run configuration, the training
//! driver and the evaluation, inference and report commands.

pub mod config;
pub mod eval;
pub mod infer;
pub mod report;
pub mod train;

use disco_core::ErrorKind;

/// Process exit code for an error class. Clap usage errors also exit with 2.
pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

/// Exit code of a gradient check with at least one failing op.
pub const GRADCHECK_FAILED: u8 = 4;
