//! Command-line front end and HTTP service for the surrogate toolkit.

pub mod cli;
pub mod data;
pub mod service;
