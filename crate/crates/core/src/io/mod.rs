//! Reading panels and writing results.

pub mod chain;
pub mod dataset;
pub mod tables;
