//! The fixed set of differentiable kernels the model is built from.

pub mod conv;
pub mod elementwise;
pub mod loss;

pub use conv::{
    conv2d_backward, conv2d_forward, conv_out_size, tconv2d_backward, tconv2d_forward,
    tconv_out_size, ConvSpec,
};
pub use elementwise::{
    add_backward, add_forward, relu_backward, relu_forward, sigmoid, sigmoid_backward,
    sigmoid_forward,
};
pub use loss::{bce_backward, bce_forward, BCE_EPSILON};
