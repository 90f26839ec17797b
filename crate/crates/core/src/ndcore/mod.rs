//! Dense tensors, a reverse-mode tape, recurrent cells and SGD.

pub mod layers;
pub mod optim;
pub mod params;
mod tape;
mod tensor;

pub use params::{Bound, Gradients, ParamSet, SharedParams};
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;

