//! Simulation, navigation control and thermal human detection for a
//! steerable cockroach search platform.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arena;
pub mod calibrate;
pub mod config;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod insect;
pub mod io;
pub mod mission;
pub mod navigation;
pub mod plot;
pub mod power;
pub mod seeds;
pub mod sensing;
pub mod thermal;

pub use error::{Error, Result};
