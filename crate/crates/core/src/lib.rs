//! Stateful random exerciser for HTTP APIs described by OpenAPI.

pub mod checker;
pub mod driver;
pub mod generator;
pub mod model;
pub mod names;
pub mod sampling;
pub mod spec;
pub mod state;
pub mod trace;
