//! Measurement and I/O support: tensor files, finite differences,
//! gradient-error ratios, compression reports and paired ablation runs.

pub mod ablation;
pub mod finite_diff;
pub mod report;
pub mod tensor_file;
pub mod validate;

pub use ablation::{loss_at_steps, paired_comparison, CheckpointLoss, PairedRow};
pub use finite_diff::{finite_diff_gradient, relative_l2};
pub use report::{compression_report, gaussian_tensor, inject_outlier_channels, CompressionReport};
pub use tensor_file::{decode_tensor, encode_tensor, load_tensor, save_tensor};
pub use validate::{
    exact_gradient, measure_fullbatch_error, measure_step_error, quantized_gradient, relative_sq_error,
    run_validation, ErrorMode, ErrorReport, ErrorRow, ErrorSummary, FullBatchMeasurement,
};
