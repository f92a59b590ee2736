//! Command line front end and HTTP service over the `moodsense` core.

pub mod commands;
pub mod config;
pub mod server;
