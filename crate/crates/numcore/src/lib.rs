//! Minimal dense-tensor arithmetic for desk-scale models.
//!
//! Values are row-major `f64` buffers. A [`Tape`] records every operation of
//! one forward pass so that [`Tape::backward`] can replay it in reverse and
//! produce gradients; trainable tensors live in a [`ParamStore`] and receive
//! those gradients additively until they are explicitly zeroed, which is what
//! lets a caller accumulate several losses before a single [`Sgd`] update.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NumError, Result};
pub use optim::{Sgd, SgdConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
