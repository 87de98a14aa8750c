//! Dense `f64` tensors, reverse-mode differentiation, Adam, and
//! finite-difference gradient checking.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamStore;
pub use tensor::{flat_index, for_each_index, strides, Tensor};
