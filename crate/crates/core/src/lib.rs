//! Tile-wise adaptive Hadamard quantization (TAH-Quant) for activations
//! exchanged between pipeline-parallel stages.
//!
//! The crate is split into four parts:
//!
//! * [`quantizer`]: entropy-guided bit allocation, pivot-swap Hadamard
//!   outlier suppression and per-tile asymmetric quantization.
//! * [`codec`]: sub-byte code packing and the versioned `.tahq` blob format.
//! * [`pipeline`]: a deterministic two-stage pipeline-parallel training
//!   simulator that pushes activations and activation gradients through the
//!   codec every step.
//! * [`harness`]: tensor files, gradient-error measurements, finite
//!   differences and compression reports used by the `tahq` CLI.

pub mod codec;
pub mod error;
pub mod harness;
pub mod pipeline;
pub mod quantizer;
pub mod tensor;

pub use codec::{decode_blob, encode_blob, pack_codes, pack_codes_into, unpack_codes, unpack_codes_into};
pub use error::{Error, Result};
pub use quantizer::{
    allocate_bits, dequantize_activation, dequantize_tile, detect_outlier, forward_hadamard,
    inverse_hadamard, naive_dequantize, naive_quantize, quantize_activation, quantize_tile,
    token_entropy, BitMap, CompressedActivation, EntropyMap, QuantConfig, TileMeta,
};
pub use tensor::{ActivationTensor, Real, Shape};
