//! Oracles shared between the focused test files and the acceptance run.
#![allow(dead_code)]

pub mod gradcheck;
pub mod grouping;
pub mod oracles;
