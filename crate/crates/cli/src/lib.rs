//! Experiment harness for passkit: scenario configs in, CSV tables out.

pub mod experiments;
pub mod output;
pub mod spec;
pub mod tools;
pub mod verify;
