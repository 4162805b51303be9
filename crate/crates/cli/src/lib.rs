//! Library surface of the experiment harness; the `lartk` binary is a thin
//! argument parser over these functions.

pub mod config;
pub mod harness;
pub mod render;
