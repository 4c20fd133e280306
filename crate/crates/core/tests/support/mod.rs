//! Test-only oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod canned;
pub mod fixtures;
pub mod oracle;
