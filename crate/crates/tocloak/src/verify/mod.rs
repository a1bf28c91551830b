//! Experiments.

pub mod form;
pub mod cloak;
pub mod scenario;
pub mod energy;
pub mod decoupled;
