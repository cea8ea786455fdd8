use std::io::Write;
use std::sync::mpsc;
use std::thread;

use crate::error::{Error, Result};
use crate::pipeline::channel::{decode_message, encode_backward, encode_forward, Compression, Endpoint};
use crate::pipeline::data::{SyntheticTask, TaskConfig, TrainBatch};
use crate::pipeline::model::{PipelineModel, StageA, StageACache, StageB};
use crate::pipeline::optim::{MomentumState, OptimizerConfig};

/// How the two stages are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    /// Both stages on the calling thread, in lockstep.
    Sequential,
    /// One thread per stage, exchanging bytes over in-process queues.
    TwoWorker,
    /// One thread per stage, exchanging bytes over a loopback TCP socket.
    Loopback,
}

impl Execution {
    /// Reads `TAHQ_THREADS`: `2` (or more) selects [`Execution::TwoWorker`],
    /// anything else [`Execution::Sequential`].
    pub fn from_env() -> Self {
        match std::env::var("TAHQ_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            Some(n) if n >= 2 => Self::TwoWorker,
            _ => Self::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskConfig,
    /// Seeds the student initialization and the batch stream.
    pub seed: u64,
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    pub compression: Compression,
    pub execution: Execution,
    /// Decode every outgoing message and compare it with its source.
    pub verify_wire: bool,
}

impl TrainConfig {
    pub fn new(task: TaskConfig, compression: Compression) -> Self {
        Self {
            seed: task.seed,
            task,
            steps: 500,
            optimizer: OptimizerConfig::new(0.1, 0.1),
            compression,
            execution: Execution::Sequential,
            verify_wire: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.task.dims.validate()?;
        self.compression.validate(self.task.dims.channels)
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub bits_fw_mean: f64,
    pub bytes_fw: usize,
    pub bytes_bw: usize,
}

/// Extra per-step information from [`train_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub bits_fw_mean: f64,
    pub bytes_fw: usize,
    pub bytes_bw: usize,
    pub transform_fraction: f64,
}

/// Momentum buffers of both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerStates {
    pub stage_a: MomentumState,
    pub stage_b: MomentumState,
}

impl OptimizerStates {
    pub fn new(model: &PipelineModel, cfg: &OptimizerConfig) -> Self {
        Self {
            stage_a: MomentumState::new(model.stage_a.params.len(), cfg),
            stage_b: MomentumState::new(model.stage_b.params.len(), cfg),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<StepRecord>,
    pub model: PipelineModel,
    pub states: OptimizerStates,
}

// Stage halves of one step. The sequential and threaded schedules call
// exactly these, so both produce the same floating-point operations.

struct Forwarded {
    cache: StageACache,
    message: crate::pipeline::channel::Encoded,
}

fn stage_a_forward(stage: &StageA, batch: &TrainBatch, compression: &Compression, verify: bool) -> Result<Forwarded> {
    let (act, cache) = stage.forward(&batch.inputs, batch.shape)?;
    let message = encode_forward(&act, compression, verify)?;
    Ok(Forwarded { cache, message })
}

struct BackwardOut {
    loss: f64,
    message: crate::pipeline::channel::Encoded,
}

fn stage_b_step(
    stage: &mut StageB,
    state: &mut MomentumState,
    fw_bytes: &[u8],
    targets: &[f64],
    compression: &Compression,
    verify: bool,
) -> Result<BackwardOut> {
    let act = decode_message(fw_bytes)?;
    let out = stage.loss_and_grad(&act, targets)?;
    let message = encode_backward(&out.grad_act, compression, verify)?;
    state.update(&out.grad_params, &mut stage.params)?;
    Ok(BackwardOut {
        loss: out.loss,
        message,
    })
}

fn stage_a_apply(stage: &mut StageA, state: &mut MomentumState, cache: &StageACache, bw_bytes: &[u8]) -> Result<()> {
    let grad_act = decode_message(bw_bytes)?;
    let grad = stage.backward(cache, &grad_act)?;
    state.update(&grad, &mut stage.params)
}

/// One iteration of the pipeline: stage A forward and compress, stage B
/// decompress, loss and backward, naive-compress the activation gradient,
/// stage A decompress and backward, then momentum updates on both stages.
/// Every tensor crossing the cut goes through its byte encoding.
pub fn train_step(
    model: &mut PipelineModel,
    states: &mut OptimizerStates,
    batch: &TrainBatch,
    compression: &Compression,
    verify_wire: bool,
) -> Result<(f64, StepDiagnostics)> {
    let fw = stage_a_forward(&model.stage_a, batch, compression, verify_wire)?;
    let bw = stage_b_step(
        &mut model.stage_b,
        &mut states.stage_b,
        &fw.message.bytes,
        &batch.targets,
        compression,
        verify_wire,
    )?;
    stage_a_apply(&mut model.stage_a, &mut states.stage_a, &fw.cache, &bw.message.bytes)?;
    Ok((
        bw.loss,
        StepDiagnostics {
            bits_fw_mean: fw.message.bits_mean,
            bytes_fw: fw.message.bytes.len(),
            bytes_bw: bw.message.bytes.len(),
            transform_fraction: fw.message.transform_fraction,
        },
    ))
}

/// Runs `cfg.steps` iterations on `task` from the student initialized with `cfg.seed`.
pub fn run_training_on(task: &SyntheticTask, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = task.init_model(cfg.seed)?;
    run_training_from(task, model, cfg)
}

/// Builds the task described by `cfg.task` and trains on it.
pub fn run_training(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let task = SyntheticTask::new(cfg.task.clone())?;
    run_training_on(&task, cfg)
}

/// Trains an existing model.
pub fn run_training_from(task: &SyntheticTask, model: PipelineModel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.execution {
        Execution::Sequential => run_sequential(task, model, cfg),
        Execution::TwoWorker => {
            let (a, b) = Endpoint::queue_pair();
            run_two_workers(task, model, cfg, a, b)
        }
        Execution::Loopback => {
            let (a, b) = Endpoint::loopback_pair()?;
            run_two_workers(task, model, cfg, a, b)
        }
    }
}

fn run_sequential(task: &SyntheticTask, mut model: PipelineModel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut states = OptimizerStates::new(&model, &cfg.optimizer);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = task.batch(cfg.seed, step as u64);
        let (loss, diag) = train_step(&mut model, &mut states, &batch, &cfg.compression, cfg.verify_wire)?;
        curve.push(StepRecord {
            step: step + 1,
            loss,
            bits_fw_mean: diag.bits_fw_mean,
            bytes_fw: diag.bytes_fw,
            bytes_bw: diag.bytes_bw,
        });
    }
    Ok(TrainOutcome { curve, model, states })
}

struct AReport {
    bits_fw_mean: f64,
    bytes_fw: usize,
}

struct BReport {
    loss: f64,
    bytes_bw: usize,
}

fn run_two_workers(
    task: &SyntheticTask,
    model: PipelineModel,
    cfg: &TrainConfig,
    mut link_a: Endpoint,
    mut link_b: Endpoint,
) -> Result<TrainOutcome> {
    let PipelineModel {
        dims,
        stage_a,
        stage_b,
    } = model;
    let (tx_a, rx_a) = mpsc::channel::<AReport>();
    let (tx_b, rx_b) = mpsc::channel::<BReport>();

    // Each worker owns its link so that an early error drops it and unblocks the peer.
    let (res_a, res_b) = thread::scope(|scope| {
        let worker_a = scope.spawn(move || -> Result<(StageA, MomentumState)> {
            let mut stage_a = stage_a;
            let mut state_a = MomentumState::new(stage_a.params.len(), &cfg.optimizer);
            for step in 0..cfg.steps {
                let batch = task.batch(cfg.seed, step as u64);
                let fw = stage_a_forward(&stage_a, &batch, &cfg.compression, cfg.verify_wire)?;
                let report = AReport {
                    bits_fw_mean: fw.message.bits_mean,
                    bytes_fw: fw.message.bytes.len(),
                };
                link_a.send(fw.message.bytes)?;
                let bw = link_a.recv()?;
                stage_a_apply(&mut stage_a, &mut state_a, &fw.cache, &bw)?;
                let _ = tx_a.send(report);
            }
            Ok((stage_a, state_a))
        });
        let worker_b = scope.spawn(move || -> Result<(StageB, MomentumState)> {
            let mut stage_b = stage_b;
            let mut state_b = MomentumState::new(stage_b.params.len(), &cfg.optimizer);
            for step in 0..cfg.steps {
                let batch = task.batch(cfg.seed, step as u64);
                let fw = link_b.recv()?;
                let out = stage_b_step(
                    &mut stage_b,
                    &mut state_b,
                    &fw,
                    &batch.targets,
                    &cfg.compression,
                    cfg.verify_wire,
                )?;
                let report = BReport {
                    loss: out.loss,
                    bytes_bw: out.message.bytes.len(),
                };
                link_b.send(out.message.bytes)?;
                let _ = tx_b.send(report);
            }
            Ok((stage_b, state_b))
        });
        (
            worker_a.join().expect("stage A worker panicked"),
            worker_b.join().expect("stage B worker panicked"),
        )
    });

    // A hung-up link is only a symptom; report the root cause.
    let ((stage_a, state_a), (stage_b, state_b)) = match (res_a, res_b) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(Error::Channel(_)), Err(e)) | (Err(e), _) | (_, Err(e)) => return Err(e),
    };

    let curve = rx_a
        .iter()
        .zip(rx_b.iter())
        .enumerate()
        .map(|(i, (a, b))| StepRecord {
            step: i + 1,
            loss: b.loss,
            bits_fw_mean: a.bits_fw_mean,
            bytes_fw: a.bytes_fw,
            bytes_bw: b.bytes_bw,
        })
        .collect();
    Ok(TrainOutcome {
        curve,
        model: PipelineModel {
            dims,
            stage_a,
            stage_b,
        },
        states: OptimizerStates {
            stage_a: state_a,
            stage_b: state_b,
        },
    })
}

/// Single-process momentum SGD on the same batches with no stage boundary:
/// exact backprop through the whole network.
pub fn reference_training(task: &SyntheticTask, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.optimizer.validate()?;
    let mut model = task.init_model(cfg.seed)?;
    let mut states = OptimizerStates::new(&model, &cfg.optimizer);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = task.batch(cfg.seed, step as u64);
        let (act, cache) = model.stage_a.forward(&batch.inputs, batch.shape)?;
        let out = model.stage_b.loss_and_grad(&act, &batch.targets)?;
        let grad_a = model.stage_a.backward(&cache, &out.grad_act)?;
        states.stage_b.update(&out.grad_params, &mut model.stage_b.params)?;
        states.stage_a.update(&grad_a, &mut model.stage_a.params)?;
        curve.push(StepRecord {
            step: step + 1,
            loss: out.loss,
            bits_fw_mean: 64.0,
            bytes_fw: 0,
            bytes_bw: 0,
        });
    }
    Ok(TrainOutcome { curve, model, states })
}

pub const LOSS_CSV_HEADER: [&str; 5] = ["step", "loss", "bits_fw_mean", "bytes_fw", "bytes_bw"];

/// Writes the curve as CSV with columns `step,loss,bits_fw_mean,bytes_fw,bytes_bw`.
pub fn write_loss_csv<W: Write>(out: W, curve: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOSS_CSV_HEADER)?;
    for r in curve {
        w.write_record([
            r.step.to_string(),
            format!("{:.10e}", r.loss),
            format!("{:.4}", r.bits_fw_mean),
            r.bytes_fw.to_string(),
            r.bytes_bw.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::QuantConfig;

    fn tiny_cfg(compression: Compression) -> TrainConfig {
        TrainConfig {
            steps: 20,
            ..TrainConfig::new(TaskConfig::tiny(1), compression)
        }
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let mut cfg = tiny_cfg(Compression::Passthrough);
        cfg.steps = 0;
        let task = SyntheticTask::new(cfg.task.clone()).unwrap();
        let out = run_training_on(&task, &cfg).unwrap();
        assert!(out.curve.is_empty());
        assert_eq!(out.model, task.init_model(cfg.seed).unwrap());
    }

    #[test]
    fn passthrough_matches_reference_bitwise() {
        let cfg = tiny_cfg(Compression::Passthrough);
        let task = SyntheticTask::new(cfg.task.clone()).unwrap();
        let reference = reference_training(&task, &cfg).unwrap();
        for execution in [Execution::Sequential, Execution::TwoWorker, Execution::Loopback] {
            let out = run_training_on(&task, &TrainConfig { execution, ..cfg.clone() }).unwrap();
            assert_eq!(out.model, reference.model, "{execution:?}");
            let same = out
                .curve
                .iter()
                .zip(&reference.curve)
                .all(|(a, b)| a.loss.to_bits() == b.loss.to_bits());
            assert!(same, "{execution:?}");
        }
    }

    #[test]
    fn tah_runs_identically_across_schedules() {
        let cfg = tiny_cfg(Compression::tah(QuantConfig::default()));
        let task = SyntheticTask::new(cfg.task.clone()).unwrap();
        let seq = run_training_on(&task, &cfg).unwrap();
        let two = run_training_on(&task, &TrainConfig { execution: Execution::TwoWorker, ..cfg.clone() }).unwrap();
        assert_eq!(seq.curve, two.curve);
        assert_eq!(seq.model, two.model);
        assert!(seq.curve.iter().all(|r| (r.bits_fw_mean - 3.75).abs() < 1e-12));
        assert!(seq.curve.last().unwrap().loss < seq.curve[0].loss);
    }

    #[test]
    fn rejects_invalid_hyperparameters() {
        let mut cfg = tiny_cfg(Compression::Passthrough);
        cfg.optimizer.beta1 = 1.5;
        assert!(matches!(run_training(&cfg), Err(Error::InvalidConfig(_))));
        let cfg = tiny_cfg(Compression::tah(QuantConfig::default().with_tile_size(64)));
        assert!(run_training(&cfg).is_err());
    }

    #[test]
    fn csv_schema() {
        let mut buf = Vec::new();
        let rec = StepRecord {
            step: 1,
            loss: 0.5,
            bits_fw_mean: 3.8,
            bytes_fw: 100,
            bytes_bw: 200,
        };
        write_loss_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,loss,bits_fw_mean,bytes_fw,bytes_bw");
        assert!(lines.next().unwrap().starts_with("1,5.0000000000e-1,3.8000,100,200"));
    }
}
