//! Conformance checking of key-value operation histories against a family
//! of consistency levels.

pub mod constraints;
pub mod generate;
pub mod history;
pub mod levels;
pub mod ordering;
pub mod scenarios;
pub mod search;
