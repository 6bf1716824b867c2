//! Forward and backward kernels every network is assembled from.

mod activation;
mod conv;
mod gradcheck;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_grad};
pub(crate) use activation::{relu_in_place, relu_mask_by_output};
pub use conv::{conv2d, conv2d_grad, conv2d_shared, deconv2d, deconv2d_grad, ConvGrads, ConvSpec};
pub use gradcheck::{grad_check, numeric_gradient, relative_error};
pub use linear::{linear, linear_grad, LinearGrads};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use pool::{global_avg_pool, global_avg_pool_grad, maxpool2d, maxpool2d_grad, Pooled};
