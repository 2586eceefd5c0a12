//! Dense f64 tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a rank-1..3 row-major value type. [`Tape`] records a
//! Wengert list of primitive operations as they execute and replays it in
//! reverse to accumulate gradients; the graph is rebuilt on every forward
//! pass. [`grad_check`] compares tape gradients against central finite
//! differences.
//!
//! Everything is f64. There is no broadcasting beyond the row-bias case
//! ([`Tape::add_row`]) and no control-flow differentiation; the op set is
//! exactly what the encoder, adapters, and classifier head need.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Grads, NodeId, Tape};
pub use tensor::Tensor;
