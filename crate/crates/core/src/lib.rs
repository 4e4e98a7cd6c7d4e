//! Directive-driven auto-tuning over a small Fortran-style kernel language.
//!
//! Source annotated with `!OAT$` directives is split into tuning regions,
//! each region is expanded into semantically equivalent variants, and the
//! variants are searched across the install, static and dynamic stages with
//! results kept in S-expression parameter files.

pub mod kernel;
pub mod directive;
pub mod fitting;
pub mod params;
pub mod transform;
pub mod search;
pub mod orchestrator;
