// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod editor;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod numerics;
pub mod regressor;
pub mod sdfnet;
pub mod service;
pub mod synthcars;

pub use error::{Error, Result};
