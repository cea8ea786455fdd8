//! Relative gradient-error measurements for the quantized pipeline.
//!
//! Step-wise: `‖ĝ − g‖² / ‖g‖²` on one batch, with `ĝ` from the compressed
//! byte path and `g` exact. Full-batch: `‖E[ĝ] − ∇f‖² / ‖∇f‖²` with both
//! expectations taken over the whole synthetic training set.

use std::io::Write;

use crate::error::{Error, Result};
use crate::pipeline::{
    decode_message, encode_backward, encode_forward, train_step, Compression, OptimizerStates,
    PipelineModel, SyntheticTask, TrainBatch, TrainConfig,
};

/// Parameter gradient `[stage A, stage B]` with activations and activation
/// gradients passed through `compression`'s byte encoding.
pub fn quantized_gradient(model: &PipelineModel, batch: &TrainBatch, compression: &Compression) -> Result<Vec<f64>> {
    let (act, cache) = model.stage_a.forward(&batch.inputs, batch.shape)?;
    let received = decode_message(&encode_forward(&act, compression, false)?.bytes)?;
    let out = model.stage_b.loss_and_grad(&received, &batch.targets)?;
    let grad_act = decode_message(&encode_backward(&out.grad_act, compression, false)?.bytes)?;
    let mut grad = model.stage_a.backward(&cache, &grad_act)?;
    grad.extend_from_slice(&out.grad_params);
    Ok(grad)
}

/// Exact parameter gradient of the batch loss.
pub fn exact_gradient(model: &PipelineModel, batch: &TrainBatch) -> Result<Vec<f64>> {
    let (act, cache) = model.stage_a.forward(&batch.inputs, batch.shape)?;
    let out = model.stage_b.loss_and_grad(&act, &batch.targets)?;
    let mut grad = model.stage_a.backward(&cache, &out.grad_act)?;
    grad.extend_from_slice(&out.grad_params);
    Ok(grad)
}

/// `‖approx − exact‖² / ‖exact‖²`.
pub fn relative_sq_error(approx: &[f64], exact: &[f64]) -> Result<f64> {
    if approx.len() != exact.len() {
        return Err(Error::Shape(format!("{} vs {} gradient entries", approx.len(), exact.len())));
    }
    let norm: f64 = exact.iter().map(|v| v * v).sum();
    if norm == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let diff: f64 = approx.iter().zip(exact).map(|(a, e)| (a - e) * (a - e)).sum();
    Ok(diff / norm)
}

/// Step-wise relative error on one batch.
pub fn measure_step_error(model: &PipelineModel, batch: &TrainBatch, compression: &Compression) -> Result<f64> {
    let approx = quantized_gradient(model, batch, compression)?;
    let exact = exact_gradient(model, batch)?;
    relative_sq_error(&approx, &exact)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullBatchMeasurement {
    /// `‖E[ĝ] − ∇f‖² / ‖∇f‖²`.
    pub ratio: f64,
    /// Mean of `‖g_batch − ∇f‖²` over batches (empirical σ²).
    pub variance: f64,
}

/// Full-batch relative error. Per-batch gradients are weighted by batch size,
/// so the weighted exact average is the full-dataset gradient.
pub fn measure_fullbatch_error(
    model: &PipelineModel,
    task: &SyntheticTask,
    compression: &Compression,
) -> Result<FullBatchMeasurement> {
    let batches = task.full_batches();
    if batches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: usize = batches.iter().map(|b| b.sequences.len()).sum();
    let n = model.dims.param_count();
    let mut mean_hat = vec![0.0; n];
    let mut mean_exact = vec![0.0; n];
    let mut exact_per_batch = Vec::with_capacity(batches.len());
    for batch in &batches {
        let w = batch.sequences.len() as f64 / total as f64;
        let approx = quantized_gradient(model, batch, compression)?;
        let exact = exact_gradient(model, batch)?;
        for i in 0..n {
            mean_hat[i] += w * approx[i];
            mean_exact[i] += w * exact[i];
        }
        exact_per_batch.push((w, exact));
    }
    let variance = exact_per_batch
        .iter()
        .map(|(w, g)| w * g.iter().zip(&mean_exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(FullBatchMeasurement {
        ratio: relative_sq_error(&mean_hat, &mean_exact)?,
        variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMode {
    Step,
    FullBatch,
}

impl ErrorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Step => "step",
            Self::FullBatch => "fullbatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub step: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub max: f64,
    pub median: f64,
    /// `1 − max ratio`.
    pub implied_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub mode: ErrorMode,
    pub rows: Vec<ErrorRow>,
    /// Mean empirical gradient variance over full-batch measurements.
    pub sigma2: Option<f64>,
}

impl ErrorReport {
    pub fn summary(&self) -> Option<ErrorSummary> {
        if self.rows.is_empty() {
            return None;
        }
        let mut ratios: Vec<f64> = self.rows.iter().map(|r| r.ratio).collect();
        ratios.sort_by(f64::total_cmp);
        let n = ratios.len();
        let median = if n % 2 == 1 {
            ratios[n / 2]
        } else {
            0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
        };
        let max = ratios[n - 1];
        Some(ErrorSummary {
            max,
            median,
            implied_delta: 1.0 - max,
        })
    }

    /// CSV with columns `step,mode,ratio`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "mode", "ratio"])?;
        for r in &self.rows {
            w.write_record([r.step.to_string(), self.mode.as_str().to_string(), format!("{:.10e}", r.ratio)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains with `cfg` (sequentially) and measures the gradient error with the
/// parameters in effect at each of the first `cfg.steps` steps, every
/// `every` steps, before that step's update.
pub fn run_validation(task: &SyntheticTask, cfg: &TrainConfig, mode: ErrorMode, every: usize) -> Result<ErrorReport> {
    cfg.validate()?;
    let every = every.max(1);
    let mut model = task.init_model(cfg.seed)?;
    let mut states = OptimizerStates::new(&model, &cfg.optimizer);
    let mut rows = Vec::new();
    let mut variances = Vec::new();
    for step in 0..cfg.steps {
        let batch = task.batch(cfg.seed, step as u64);
        if step % every == 0 {
            let ratio = match mode {
                ErrorMode::Step => measure_step_error(&model, &batch, &cfg.compression)?,
                ErrorMode::FullBatch => {
                    let m = measure_fullbatch_error(&model, task, &cfg.compression)?;
                    variances.push(m.variance);
                    m.ratio
                }
            };
            rows.push(ErrorRow { step: step + 1, ratio });
        }
        train_step(&mut model, &mut states, &batch, &cfg.compression, cfg.verify_wire)?;
    }
    let sigma2 = (!variances.is_empty()).then(|| variances.iter().sum::<f64>() / variances.len() as f64);
    Ok(ErrorReport { mode, rows, sigma2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::TaskConfig;
    use crate::quantizer::QuantConfig;

    fn setup() -> (SyntheticTask, PipelineModel) {
        let task = SyntheticTask::new(TaskConfig::tiny(4)).unwrap();
        let model = task.init_model(4).unwrap();
        (task, model)
    }

    #[test]
    fn passthrough_has_zero_error() {
        let (task, model) = setup();
        let batch = task.batch(0, 0);
        assert_eq!(measure_step_error(&model, &batch, &Compression::Passthrough).unwrap(), 0.0);
        let full = measure_fullbatch_error(&model, &task, &Compression::Passthrough).unwrap();
        assert_eq!(full.ratio, 0.0);
        assert!(full.variance > 0.0);
    }

    #[test]
    fn zero_estimate_has_unit_error() {
        let g = [0.5, -1.0, 2.0];
        assert_eq!(relative_sq_error(&[0.0; 3], &g).unwrap(), 1.0);
    }

    #[test]
    fn zero_reference_is_undefined() {
        assert!(matches!(relative_sq_error(&[1.0], &[0.0]), Err(Error::UndefinedRatio)));
    }

    #[test]
    fn tah_error_is_contractive() {
        let (task, model) = setup();
        let comp = Compression::tah(QuantConfig::default());
        let r = measure_step_error(&model, &task.batch(0, 0), &comp).unwrap();
        assert!(r > 0.0 && r < 1.0, "ratio {r}");
    }

    #[test]
    fn report_summary() {
        let report = ErrorReport {
            mode: ErrorMode::Step,
            rows: [0.1, 0.4, 0.2, 0.3].iter().enumerate().map(|(i, &r)| ErrorRow { step: i + 1, ratio: r }).collect(),
            sigma2: None,
        };
        let s = report.summary().unwrap();
        assert_eq!(s.max, 0.4);
        assert!((s.median - 0.25).abs() < 1e-15);
        assert!((s.implied_delta - 0.6).abs() < 1e-15);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step,mode,ratio\n1,step,"));
    }
}
