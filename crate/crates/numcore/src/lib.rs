//! Dense `f64` tensors, named parameters, a reverse-mode tape, central
//! differences and a flat checkpoint format.

pub mod checkpoint;
mod error;
pub mod finite_diff;
pub mod ops;
mod param;
mod tape;
mod tensor;

pub use error::{NumError, Result};
pub use finite_diff::{finite_diff_grad, max_rel_error};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Adjacency, Grads, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
