//! Dense tensors, a reverse-mode tape, losses, Gumbel sampling and Adam.

mod adam;
mod gradcheck;
mod gumbel;
mod loss;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, grad_check_at, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use gumbel::{gumbel_noise, gumbel_softmax_sample, gumbel_softmax_with_noise, sample_index, GumbelSample};
pub use loss::sigmoid;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
