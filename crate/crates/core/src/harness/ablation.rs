use crate::error::{Error, Result};
use crate::pipeline::{train_step, OptimizerStates, SyntheticTask, TaskConfig, TrainConfig};

/// Losses of one run at a checkpoint step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointLoss {
    pub step: usize,
    /// Loss stage B reported for this step's batch, computed on the
    /// dequantized activation. NaN at step 0.
    pub train: f64,
    /// Exact loss over the whole training set after the step.
    pub full: f64,
}

/// Trains sequentially and records both losses after each step in
/// `checkpoints` (strictly increasing, 1-based; 0 means the initial model).
pub fn loss_at_steps(task: &SyntheticTask, cfg: &TrainConfig, checkpoints: &[usize]) -> Result<Vec<CheckpointLoss>> {
    cfg.validate()?;
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("checkpoints must be strictly increasing".into()));
    }
    let mut model = task.init_model(cfg.seed)?;
    let mut states = OptimizerStates::new(&model, &cfg.optimizer);
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    if next.peek() == Some(&&0) {
        out.push(CheckpointLoss {
            step: 0,
            train: f64::NAN,
            full: task.full_loss(&model)?,
        });
        next.next();
    }
    let last = checkpoints.last().copied().unwrap_or(0);
    for step in 0..last {
        let batch = task.batch(cfg.seed, step as u64);
        let (train, _) = train_step(&mut model, &mut states, &batch, &cfg.compression, cfg.verify_wire)?;
        if next.peek() == Some(&&(step + 1)) {
            out.push(CheckpointLoss {
                step: step + 1,
                train,
                full: task.full_loss(&model)?,
            });
            next.next();
        }
    }
    Ok(out)
}

/// Seed-averaged losses of a treatment and a control run at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRow {
    pub step: usize,
    pub treatment: CheckpointLoss,
    pub control: CheckpointLoss,
}

impl PairedRow {
    /// Training-loss gap `control − treatment`; positive when the treatment
    /// is better.
    pub fn gap(&self) -> f64 {
        self.control.train - self.treatment.train
    }

    /// Same gap on the full-dataset loss.
    pub fn full_gap(&self) -> f64 {
        self.control.full - self.treatment.full
    }
}

/// Runs `treatment` and `control` on every seed of `seeds` and averages both
/// losses at each checkpoint. Each seed rebuilds the task and re-seeds both
/// runs, so paired runs see identical data; the two arms must share one task
/// config.
pub fn paired_comparison(
    treatment: &TrainConfig,
    control: &TrainConfig,
    seeds: &[u64],
    checkpoints: &[usize],
) -> Result<Vec<PairedRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one seed is required".into()));
    }
    if treatment.task != control.task {
        return Err(Error::InvalidConfig("paired runs must use the same task".into()));
    }
    let zero = |step| CheckpointLoss {
        step,
        train: 0.0,
        full: 0.0,
    };
    let mut rows: Vec<PairedRow> = checkpoints
        .iter()
        .map(|&step| PairedRow {
            step,
            treatment: zero(step),
            control: zero(step),
        })
        .collect();
    let n = seeds.len() as f64;
    for &seed in seeds {
        let task = SyntheticTask::new(TaskConfig {
            seed,
            ..treatment.task.clone()
        })?;
        let t = loss_at_steps(&task, &TrainConfig { seed, ..treatment.clone() }, checkpoints)?;
        let c = loss_at_steps(&task, &TrainConfig { seed, ..control.clone() }, checkpoints)?;
        for ((row, t), c) in rows.iter_mut().zip(&t).zip(&c) {
            row.treatment.train += t.train / n;
            row.treatment.full += t.full / n;
            row.control.train += c.train / n;
            row.control.full += c.full / n;
        }
    }
    Ok(rows)
}
