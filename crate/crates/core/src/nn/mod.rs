//! Layers composed from tape ops.
//!
//! Activations (ReLU, leaky ReLU, GELU, sigmoid, softmax) are methods on
//! [`crate::autograd::Var`].

pub mod attention;
pub mod channel_attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pad;
pub mod pixel_shuffle;

pub use attention::{relative_position_index, WindowAttention, WindowGrid};
pub use channel_attention::{Cab, ChannelAttention};
pub use conv::{conv2d, Conv2d, ConvGeom};
pub use linear::Linear;
pub use norm::{instance_norm_half, layer_norm, HalfInstanceNorm, LayerNorm};
pub use pixel_shuffle::{pixel_shuffle, pixel_shuffle_tensor, pixel_unshuffle_tensor};
