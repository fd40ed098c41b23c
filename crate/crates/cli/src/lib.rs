//! Library side of the `coxhoa` command-line tool.

pub mod commands;
pub mod stats;
pub mod study;
