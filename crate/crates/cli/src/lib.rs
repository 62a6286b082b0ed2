//! Experiment runner behind the `proxydml` binary.

pub mod commands;
pub mod config;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const BOUND_VIOLATION: i32 = 4;
}

/// Maps an error to its exit code: numeric aborts get their own code,
/// everything else is a configuration or input problem.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let numeric = err
        .chain()
        .any(|c| matches!(c.downcast_ref::<proxydml::Error>(), Some(proxydml::Error::Numeric(_))));
    if numeric {
        exit::NUMERIC
    } else {
        exit::INPUT
    }
}
