//! Network building blocks: linear and convolution stubs, cross attention,
//! the residual feed-forward block, the two-branch inter-transformer
//! encoder, and NetVLAD pooling.

mod attention;
mod linear;
mod netvlad;
mod params;

pub use attention::{CrossAttention, EncoderBranch, FeedForward, InterTransformer};
pub use linear::{global_mean, grid_tokens, ConvRelu, Linear};
pub use netvlad::NetVlad;
pub use params::{grad_check_params, init_params, Bound, Init, Module, ParamSpec, ParamStore};
