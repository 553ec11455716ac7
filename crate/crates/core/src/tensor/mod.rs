//! Dense tensors, a reverse-mode tape, a GRU cell and Adam.

mod adam;
mod dense;
mod gradcheck;
mod gru;
mod kernels;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use dense::Tensor;
pub use gradcheck::{grad_check, FD_EPS, REL_FLOOR};
pub use gru::GruCell;
pub use params::{BoundParams, Param, ParamId, ParamStore};
pub use tape::{Gradients, ScoreKind, Segments, Tape, Var, BCE_CLAMP};
