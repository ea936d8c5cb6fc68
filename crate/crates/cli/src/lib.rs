//! Command-line orchestration and the HTTP deployment service.

pub mod commands;
pub mod serve;
