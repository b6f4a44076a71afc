//! Layer kernels. Each forward has a matching backward; the tape in
//! [`crate::autograd`] wires them together.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;

pub use activation::{leaky_relu, leaky_relu_backward, DEFAULT_LEAKY_SLOPE};
pub use conv::{conv2d, conv2d_backward, ConvSpec};
pub use linear::{linear, linear_backward};
pub use loss::{cross_entropy, cross_entropy_backward, softmax};
pub use norm::{batch_norm_backward, batch_norm_forward, BatchNormState, BnCache};
pub use pool::{
    avg_pool2d, avg_pool2d_backward, global_avg_pool, global_avg_pool_backward, max_pool2d, max_pool2d_backward,
    upsample_nearest, upsample_nearest_backward, PoolSpec,
};
