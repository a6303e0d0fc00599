//! Network assembly, presets and checkpoints.

mod checkpoint;
mod config;
mod net;

pub use checkpoint::{decode_tensors, encode_tensors, infer_config, read_tensors, write_tensors};
pub use config::{
    alignment_param_count, analytic_param_count, block_param_count, preset, Preset, VesrNetConfig,
};
pub(crate) use config::parse_value;
pub use net::{build_model, VesrNet};
