//! Command-line and HTTP front end for the screengraph search engine.

pub mod commands;
pub mod config;
pub mod server;
