//! Dense linear algebra, activations, seeded randomness, optimisation and
//! gradient verification shared by the model components.

mod activations;
mod gradcheck;
mod hash;
mod matrix;
mod optim;
mod rng;

pub use activations::{gelu, gelu_grad, log_sigmoid, log_sum_exp, sigmoid, softmax, softmax_in_place};
pub use gradcheck::{
    finite_difference_check, relative_error, CoordinateMismatch, GradCheckReport,
    RELATIVE_ERROR_FLOOR,
};
pub use hash::ContentHasher;
pub use matrix::{axpy, dot, norm_sq, DenseMatrix};
pub use optim::{Adam, AdamConfig};
pub use rng::Rng;
