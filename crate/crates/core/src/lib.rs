//! Drive-mode optimization and route planning for plug-in hybrid vehicles.

// `!(x >= lo)` style checks reject NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod calibrate;
pub mod dmop;
pub mod error;
pub mod io;
pub mod model;
pub mod online;
pub mod pathplan;
pub mod relax;
pub mod sweep;

pub use error::{Error, Result};
