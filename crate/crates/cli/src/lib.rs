//! Command-line experiments and property checks built on `ise-core`.

pub mod checks;
pub mod commands;
pub mod config;

use ise_core::Error;

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const ASSERTION: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const DATA: i32 = 4;
}

/// Maps a library error onto the exit-code contract.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => exit::IO,
        Error::Json(_) | Error::MalformedFile(_) | Error::UnsupportedFormat(_) => exit::DATA,
        _ => exit::CONFIG,
    }
}
