//! Pure forward operators and their reverse-mode kernels.
//!
//! Every function here is deterministic: identical inputs produce
//! bit-identical outputs regardless of thread count.

pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod pool;
pub mod shape;

pub use conv::{conv2d, conv2d_backward, conv_out_len};
pub use elementwise::{activation, binary, map_unary, sigmoid, Activation, BinaryKind};
pub use norm::{
    batchnorm_infer, batchnorm_infer_backward, batchnorm_train, batchnorm_train_backward, BnSaved,
};
pub use pool::{maxpool2d, maxpool2d_backward, MaxPoolCfg};
pub use shape::{
    concat_channels, gather, slice_channels, upsample_nearest_2x, upsample_nearest_2x_backward,
};
