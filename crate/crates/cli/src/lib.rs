//! Library surface of the scenario runner (the binary is a thin wrapper,
//! and the test suites drive runs through here).

pub mod catalog_scenarios;
pub mod runner;
pub mod scenario;
