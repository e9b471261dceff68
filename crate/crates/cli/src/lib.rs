pub mod commands;
pub mod config;
pub mod report;

/// Exit codes: 0 ok, 2 truncated run, 3 non-convergence, 64 usage, 74 I/O.
pub const EXIT_OK: u8 = 0;
pub const EXIT_TRUNCATED: u8 = 2;
pub const EXIT_NO_CONVERGENCE: u8 = 3;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_IO: u8 = 74;
