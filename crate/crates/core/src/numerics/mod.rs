//! Numerical substrate: tensors, reverse-mode autodiff, stable reductions and
//! reproducible randomness.

pub mod gradcheck;
pub mod math;
pub mod optim;
pub mod rng;
pub mod stable;
pub mod tape;
pub mod tensor;
pub mod vec;

pub use gradcheck::{check_primitives, grad_check, grad_check_tape, primitive_names, GradCheck, PrimitiveCheck, GRAD_CHECK_EPS};
pub use optim::{Adam, AdamConfig};
pub use rng::Rng;
pub use stable::{log_sum_exp, log_sum_exp_weighted, softmax, softmax_in_place};
pub use tape::{gelu, gelu_grad, Gradients, Tape, Var};
pub use tensor::Tensor;
