//! Full-wave simulation and beamforming toolkit for antenna arrays embedded
//! in flip-chip packages.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combiner;
pub mod error;
pub mod fdtd;
pub mod metrics;
pub mod ports;
pub mod presets;
pub mod scenario;
pub mod search;

pub use error::{Error, Result};
