//! TAH-Quant forward compressor and the naive backward quantizer.
//!
//! Every function here is pure: identical inputs give identical outputs
//! regardless of caller thread.

mod activation;
mod config;
mod entropy;
mod hadamard;
mod tile;

pub use activation::{
    dequantize_activation, naive_dequantize, naive_quantize, quantize_activation,
    CompressedActivation, Header, TileMeta,
};
pub use config::{BitAllocation, QuantConfig};
pub use entropy::{allocate_bits, high_bit_count, token_entropy, BitMap, EntropyMap};
pub use hadamard::{forward_hadamard, fwht_in_place, inverse_hadamard};
pub use tile::{dequantize_tile, detect_outlier, quantize_tile, QuantizedTile};
