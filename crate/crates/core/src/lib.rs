//! VESR-Net: multi-frame video super-resolution with separate non-local
//! fusion and channel-attention residual blocks, on a small from-scratch
//! tensor engine with reverse-mode differentiation.

pub mod analysis;
pub mod attention;
pub mod autograd;
pub mod blocks;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
