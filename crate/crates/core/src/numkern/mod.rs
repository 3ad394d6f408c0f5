//! Deterministic dense kernel: tensors, activations, GLUs, loss, AdaGrad and
//! finite-difference gradient checks.

mod gradcheck;
mod ops;
mod param;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckReport, GroupReport, GroupStatus, FD_STEP};
pub use ops::{
    bce_with_logits, glu_backward, glu_backward_accum, glu_forward, glu_trace, linear_adapter_backward,
    linear_adapter_forward, relu, relu_backward, relu_scalar, sigmoid, GluGrads, GluTrace,
};
pub use param::{Parameter, ADAGRAD_EPS};
pub use rng::{RngStream, RNG_ALGORITHM};
pub use tensor::{matvec, matvec_into, matvec_t_accum, outer_accum, Tensor2D};
