//! Scenario ingestion, coefficient registry, commands and reports.

pub mod commands;
pub mod oracle;
pub mod report;
pub mod scenario;
