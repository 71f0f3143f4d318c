//! Command-line front end and interactive session service.

pub mod commands;
pub mod service;
