//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod graph;
pub mod numeric;
mod optim;
mod tensor;

pub(crate) use graph::sigmoid;
pub use graph::{CustomOp, Graph, Unary, Var};
pub use optim::AdamW;
pub use tensor::{ParamId, ParamStore, Tensor};
