//! Layer primitives for the encoders, decoders and classification head.

mod conv;
pub mod gradcheck;
mod layer;
mod tensor;

pub use gradcheck::{directional_check, gradient_check, gradient_check_at, relative_error};
pub use layer::{
    backward, backward_pre, conv_out_len, forward, output_padding_for, preactivate, sigmoid,
    softplus, tconv_out_len, Activation, LayerKind, LayerSpec,
};
pub use tensor::Tensor;
