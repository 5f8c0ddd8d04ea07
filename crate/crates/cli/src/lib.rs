//! Config-driven benchmark harness for the dpopt solvers.
//!
//! The library half of the `dpopt` binary: TOML experiment configs, the
//! deterministic grid runner, the invariant check suite, and the embedded
//! presets. The binary is a thin argument-parsing shell over these modules,
//! so integration tests can drive everything in-process.

pub mod checks;
pub mod config;
pub mod presets;
pub mod runner;
