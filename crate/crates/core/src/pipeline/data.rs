use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::pipeline::model::{ModelDims, PipelineModel};
use crate::tensor::Shape;

/// Synthetic regression task: a fixed random teacher network labels Gaussian
/// token features.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub dims: ModelDims,
    /// Number of sequences in the training set.
    pub sequences: usize,
    /// Channels at the stage cut whose gain is raised to `outlier_gain`.
    pub outlier_channels: usize,
    pub outlier_gain: f64,
    /// Output gain of the teacher head.
    pub teacher_gain: f64,
    /// Standard deviation of the label noise.
    pub noise_std: f64,
    /// Per-token input magnitudes are log-uniform in `[1/spread, spread]`.
    pub token_spread: f64,
    pub seed: u64,
}

impl TaskConfig {
    /// Default desk-scale task: 8×16 tokens, 16 inputs, 128 channels at the cut.
    pub fn default_task(seed: u64) -> Self {
        Self {
            dims: ModelDims {
                batch: 8,
                seq: 16,
                d_in: 16,
                channels: 128,
                d_out: 4,
            },
            sequences: 64,
            outlier_channels: 0,
            outlier_gain: 20.0,
            teacher_gain: 1.0,
            noise_std: 0.1,
            token_spread: 4.0,
            seed,
        }
    }

    /// Default task with a few cut channels amplified ×20.
    pub fn outlier_task(seed: u64) -> Self {
        Self {
            outlier_channels: 4,
            ..Self::default_task(seed)
        }
    }

    /// Model small enough (< 10³ parameters) for finite-difference checks.
    pub fn tiny(seed: u64) -> Self {
        Self {
            dims: ModelDims {
                batch: 2,
                seq: 4,
                d_in: 4,
                channels: 32,
                d_out: 2,
            },
            ..Self::default_task(seed)
        }
    }
}

/// One sampled batch ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub step: u64,
    pub sequences: Vec<usize>,
    pub shape: Shape,
    /// `tokens × d_in` features.
    pub inputs: Vec<f64>,
    /// `tokens × d_out` labels.
    pub targets: Vec<f64>,
}

/// Materialized training set plus the fixed per-channel gains shared by the
/// teacher and every student.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    pub channel_scale: Vec<f64>,
    pub teacher: PipelineModel,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

// Independent ChaCha streams derived from the task seed.
const STREAM_TASK: u64 = 0;
const STREAM_STUDENT: u64 = 1;
const STREAM_BATCH: u64 = 1 << 32;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl SyntheticTask {
    pub fn new(config: TaskConfig) -> Result<Self> {
        let dims = config.dims;
        dims.validate()?;
        if config.sequences == 0 {
            return Err(Error::EmptyDataset);
        }
        if config.outlier_channels > dims.channels {
            return Err(Error::InvalidConfig(format!(
                "{} outlier channels but only {} channels",
                config.outlier_channels, dims.channels
            )));
        }
        if !(config.token_spread >= 1.0) || !(config.noise_std >= 0.0) {
            return Err(Error::InvalidConfig("token_spread must be >= 1 and noise_std >= 0".into()));
        }
        let mut rng = rng_for(config.seed, STREAM_TASK);

        let mut channel_scale = vec![1.0; dims.channels];
        for c in index::sample(&mut rng, dims.channels, config.outlier_channels) {
            channel_scale[c] = config.outlier_gain;
        }

        let mut teacher = PipelineModel::random(dims, &channel_scale, &mut rng)?;
        // Teacher uses a stronger input projection so tanh is in its nonlinear range.
        for v in &mut teacher.stage_a.params {
            *v *= 1.5;
        }
        for v in &mut teacher.stage_b.params {
            *v *= config.teacher_gain;
        }

        let tokens = config.sequences * dims.seq;
        let log_spread = config.token_spread.ln();
        let mut inputs = Vec::with_capacity(tokens * dims.d_in);
        for _ in 0..tokens {
            let magnitude = if log_spread > 0.0 {
                rng.random_range(-log_spread..=log_spread).exp()
            } else {
                1.0
            };
            for _ in 0..dims.d_in {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push(magnitude * z);
            }
        }
        let clean_targets = {
            let shape = Shape::new(1, tokens, dims.channels);
            let (act, _) = teacher.stage_a.forward(&inputs, shape)?;
            teacher.stage_b.predict(&act)?
        };
        let targets = if config.noise_std > 0.0 {
            let noise = Normal::new(0.0, config.noise_std).unwrap();
            clean_targets.into_iter().map(|y| y + noise.sample(&mut rng)).collect()
        } else {
            clean_targets
        };

        Ok(Self {
            config,
            channel_scale,
            teacher,
            inputs,
            targets,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.config.dims
    }

    /// Freshly initialized student for this task, seeded by `seed`.
    pub fn init_model(&self, seed: u64) -> Result<PipelineModel> {
        let mut rng = rng_for(seed, STREAM_STUDENT);
        PipelineModel::random(self.config.dims, &self.channel_scale, &mut rng)
    }

    fn gather(&self, sequences: &[usize], step: u64) -> TrainBatch {
        let d = self.config.dims;
        let mut inputs = Vec::with_capacity(sequences.len() * d.seq * d.d_in);
        let mut targets = Vec::with_capacity(sequences.len() * d.seq * d.d_out);
        for &s in sequences {
            let tok = s * d.seq;
            inputs.extend_from_slice(&self.inputs[tok * d.d_in..(tok + d.seq) * d.d_in]);
            targets.extend_from_slice(&self.targets[tok * d.d_out..(tok + d.seq) * d.d_out]);
        }
        TrainBatch {
            step,
            sequences: sequences.to_vec(),
            shape: Shape::new(sequences.len(), d.seq, d.channels),
            inputs,
            targets,
        }
    }

    /// Batch for `step`, reproducible from `(seed, step)` alone. Sequences
    /// are drawn without replacement within a batch.
    pub fn batch(&self, seed: u64, step: u64) -> TrainBatch {
        let mut rng = rng_for(seed, STREAM_BATCH + step);
        let d = self.config.dims;
        let picks: Vec<usize> = if d.batch <= self.config.sequences {
            index::sample(&mut rng, self.config.sequences, d.batch).into_vec()
        } else {
            (0..d.batch).map(|_| rng.random_range(0..self.config.sequences)).collect()
        };
        self.gather(&picks, step)
    }

    /// The whole training set split into consecutive batches of `B`
    /// sequences; the last batch may be smaller.
    pub fn full_batches(&self) -> Vec<TrainBatch> {
        let all: Vec<usize> = (0..self.config.sequences).collect();
        all.chunks(self.config.dims.batch).map(|c| self.gather(c, 0)).collect()
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Exact (uncompressed) loss of `model` over the whole training set.
    pub fn full_loss(&self, model: &PipelineModel) -> Result<f64> {
        model.loss(&self.inputs, &self.targets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_reproducible() {
        let task = SyntheticTask::new(TaskConfig::tiny(3)).unwrap();
        assert_eq!(task.batch(5, 17), task.batch(5, 17));
        assert_ne!(task.batch(5, 17).inputs, task.batch(5, 18).inputs);
        let again = SyntheticTask::new(TaskConfig::tiny(3)).unwrap();
        assert_eq!(task.targets(), again.targets());
    }

    #[test]
    fn outlier_gains_are_planted() {
        let task = SyntheticTask::new(TaskConfig::outlier_task(0)).unwrap();
        assert_eq!(task.channel_scale.iter().filter(|&&s| s == 20.0).count(), 4);
    }

    #[test]
    fn full_batches_cover_dataset() {
        let mut cfg = TaskConfig::tiny(0);
        cfg.sequences = 5;
        let task = SyntheticTask::new(cfg).unwrap();
        let batches = task.full_batches();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches.iter().map(|b| b.sequences.len()).sum::<usize>(), 5);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut cfg = TaskConfig::tiny(0);
        cfg.sequences = 0;
        assert!(matches!(SyntheticTask::new(cfg), Err(Error::EmptyDataset)));
    }
}
