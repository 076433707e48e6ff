//! Library side of the `gfrls` command-line tool: config and trace formats
//! plus the verbs, so they can be tested without spawning the binary.

pub mod commands;
pub mod config;
pub mod trace;
