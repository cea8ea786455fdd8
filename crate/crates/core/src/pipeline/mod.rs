//! Two-stage pipeline-parallel training simulator.
//!
//! Stage A maps token features to the cut activation and sends it through
//! TAH-Quant; stage B dequantizes, computes the loss and sends the
//! naive-quantized activation gradient back. Both stages update with
//! momentum SGD.

pub mod channel;
pub mod checkpoint;
pub mod data;
pub mod model;
pub mod optim;
pub mod train;

pub use channel::{decode_message, encode_backward, encode_forward, Compression, Endpoint};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{SyntheticTask, TaskConfig, TrainBatch};
pub use model::{ModelDims, Nonlinearity, PipelineModel, StageA, StageB};
pub use optim::{momentum_update, MomentumState, OptimizerConfig, TheoryBounds};
pub use train::{
    reference_training, run_training, run_training_from, run_training_on, train_step, write_loss_csv,
    Execution, OptimizerStates, StepDiagnostics, StepRecord, TrainConfig, TrainOutcome,
};
