//! Reverse-mode automatic differentiation over dense tensors.

mod conv;
mod gradcheck;
mod ops;
mod param;
mod real;
mod tape;
mod tensor;

pub(crate) use conv::reflect_index;
pub use conv::{avg_pool1d, conv1d, conv_transpose1d, dense, ConvGeom, PadMode, TransposeGeom};
pub use gradcheck::{
    grad_check, grad_check_at, multi_param_grad_check, param_grad_check, param_gradients, relative_error,
    term_gradients, GradientSource, MultiObjective, Objective, TensorCheck,
};
pub use ops::{weight_norm, Activation, Unary, LEAKY_SLOPE};
pub use param::{init_bias, Binding, ParamId, ParamStore, WeightNormParam};
pub use real::Real;
pub use tape::{Gradients, Tape, UnaryBackward, Var};
pub use tensor::Tensor;
