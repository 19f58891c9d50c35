//! Dense tensors, reverse-mode differentiation, layers, B-splines, Adam and
//! checkpoints: the substrate under every trained model in the crate.

pub mod adam;
pub mod bspline;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use bspline::BSplineGrid;
pub use gradcheck::{grad_check, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP};
pub use layers::{Activation, Init, Linear, Mlp};
pub use params::{Param, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
