//! Command-line front end for the `svasym` engine.

pub mod commands;
pub mod config;
