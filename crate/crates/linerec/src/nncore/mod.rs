//! Deterministic neural-network numeric core: tensors, the layer set needed
//! by the two published architectures, exact backward passes, and Adam.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod norm;
pub mod param;
pub mod pool;
pub mod tensor;

pub use adam::{adam_step, clip_global_norm, OptimizerConfig};
pub use conv::{Conv2d, ConvCache, ConvShape};
pub use layers::{
    log_softmax, log_softmax_backward, map_to_sequence, map_to_sequence_backward, relu,
    relu_backward, softmax, Dropout, DropoutCache, Linear, LinearCache,
};
pub use lstm::{BiLstm, BiLstmCache, LstmCell};
pub use norm::{BatchNorm2d, BnCache};
pub use param::Param;
pub use pool::{MaxPool2d, PoolCache};
pub use tensor::{Scalar, Tensor};
