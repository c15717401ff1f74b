//! Small dense-tensor toolkit: a reverse-mode tape over 2-D `f64` tensors,
//! the layers needed by the set/attention networks, Adam, and a binary
//! parameter checkpoint.

mod error;
pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{fd_check, FdReport};
pub use graph::{pairwise_sum, AttnGroup, Grads, Graph, ParamGrads, Var};
pub use layers::{
    attention, Activation, AttentionConfig, DeepSetConfig, DeepSetEncoder, Linear, Mlp, MultiHeadAttention,
};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor;
