//! Standard-library side of the simulator: scenario files, statistics, the
//! experiment runners, result files and the command-line tool.

pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;
pub mod stats;
