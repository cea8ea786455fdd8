//! Python bindings for `tahq-core`.
//!
//! Tensors cross the boundary as a flat row-major list of floats plus a
//! `(batch, seq, channels)` tuple. Blobs and packed codes are `bytes`.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use tahq_core::harness::{compression_report as core_report, paired_comparison as core_paired};
use tahq_core::pipeline::{run_training, Compression, OptimizerConfig, TaskConfig, TrainConfig};
use tahq_core::quantizer::BitAllocation;
use tahq_core::{ActivationTensor, Error, Shape};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn tensor<T: tahq_core::Real>(data: Vec<T>, shape: (usize, usize, usize)) -> PyResult<ActivationTensor<T>> {
    ActivationTensor::new(Shape::new(shape.0, shape.1, shape.2), data).map_err(err)
}

fn parse_allocation(name: &str) -> PyResult<BitAllocation> {
    match name {
        "entropy" => Ok(BitAllocation::Entropy),
        "high" => Ok(BitAllocation::HighOnly),
        "strided" => Ok(BitAllocation::Strided),
        _ => Err(PyValueError::new_err(format!(
            "unknown allocation {name:?}, expected entropy, high or strided"
        ))),
    }
}

fn allocation_name(a: BitAllocation) -> &'static str {
    match a {
        BitAllocation::Entropy => "entropy",
        BitAllocation::HighOnly => "high",
        BitAllocation::Strided => "strided",
    }
}

fn parse_task(name: &str, seed: u64) -> PyResult<TaskConfig> {
    match name {
        "default" => Ok(TaskConfig::default_task(seed)),
        "outlier" => Ok(TaskConfig::outlier_task(seed)),
        "tiny" => Ok(TaskConfig::tiny(seed)),
        _ => Err(PyValueError::new_err(format!(
            "unknown task {name:?}, expected default, outlier or tiny"
        ))),
    }
}

/// Quantizer settings. `allocation` is one of `"entropy"`, `"high"`
/// (every token at `b_hi`) or `"strided"` (entropy-blind, same budget).
#[pyclass(name = "QuantConfig", skip_from_py_object)]
#[derive(Clone)]
pub struct PyQuantConfig {
    #[pyo3(get, set)]
    pub tile_size: usize,
    #[pyo3(get, set)]
    pub high_frac: f64,
    #[pyo3(get, set)]
    pub b_hi: u8,
    #[pyo3(get, set)]
    pub b_lo: u8,
    #[pyo3(get, set)]
    pub tau: f64,
    #[pyo3(get, set)]
    pub hadamard: bool,
    allocation: BitAllocation,
}

#[pymethods]
impl PyQuantConfig {
    #[new]
    #[pyo3(signature = (tile_size=32, high_frac=0.8, b_hi=4, b_lo=3, tau=2.0, hadamard=true, allocation="entropy"))]
    fn new(tile_size: usize, high_frac: f64, b_hi: u8, b_lo: u8, tau: f64, hadamard: bool, allocation: &str) -> PyResult<Self> {
        let cfg = Self {
            tile_size,
            high_frac,
            b_hi,
            b_lo,
            tau,
            hadamard,
            allocation: parse_allocation(allocation)?,
        };
        cfg.core().validated().map_err(err)?;
        Ok(cfg)
    }

    #[getter]
    fn allocation(&self) -> &'static str {
        allocation_name(self.allocation)
    }

    #[setter]
    fn set_allocation(&mut self, name: &str) -> PyResult<()> {
        self.allocation = parse_allocation(name)?;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "QuantConfig(tile_size={}, high_frac={}, b_hi={}, b_lo={}, tau={}, hadamard={}, allocation={:?})",
            self.tile_size,
            self.high_frac,
            self.b_hi,
            self.b_lo,
            self.tau,
            if self.hadamard { "True" } else { "False" },
            allocation_name(self.allocation)
        )
    }
}

impl PyQuantConfig {
    pub fn core(&self) -> tahq_core::QuantConfig {
        tahq_core::QuantConfig {
            tile_size: self.tile_size,
            high_frac: self.high_frac,
            b_hi: self.b_hi,
            b_lo: self.b_lo,
            tau: self.tau,
            hadamard: self.hadamard,
            allocation: self.allocation,
            ..Default::default()
        }
    }
}

fn config(cfg: Option<PyRef<'_, PyQuantConfig>>) -> tahq_core::QuantConfig {
    cfg.map(|c| c.core()).unwrap_or_default()
}

/// Quantizes a tensor and returns the encoded `.tahq` blob.
#[pyfunction]
#[pyo3(signature = (data, shape, config=None))]
fn quantize<'py>(
    py: Python<'py>,
    data: Vec<f32>,
    shape: (usize, usize, usize),
    config: Option<PyRef<'_, PyQuantConfig>>,
) -> PyResult<Bound<'py, PyBytes>> {
    let t = tensor(data, shape)?;
    let c = tahq_core::quantize_activation(&t, &self::config(config)).map_err(err)?;
    let blob = tahq_core::encode_blob(&c).map_err(err)?;
    Ok(PyBytes::new(py, &blob))
}

/// Decodes a blob into `(data, shape)`.
#[pyfunction]
fn dequantize(blob: &[u8]) -> PyResult<(Vec<f32>, (usize, usize, usize))> {
    let c = tahq_core::decode_blob(blob).map_err(err)?;
    let t: ActivationTensor<f32> = tahq_core::dequantize_activation(&c).map_err(err)?;
    let s = t.shape();
    Ok((t.into_data(), (s.batch, s.seq, s.channels)))
}

/// Header fields and per-token bit widths of a blob.
#[pyfunction]
fn blob_info<'py>(py: Python<'py>, blob: &[u8]) -> PyResult<Bound<'py, PyDict>> {
    let c = tahq_core::decode_blob(blob).map_err(err)?;
    let h = c.header;
    let d = PyDict::new(py);
    d.set_item("shape", (h.shape.batch, h.shape.seq, h.shape.channels))?;
    d.set_item("tile_size", h.tile_size)?;
    d.set_item("b_hi", h.b_hi)?;
    d.set_item("b_lo", h.b_lo)?;
    d.set_item("adaptive_alloc", h.adaptive_alloc)?;
    d.set_item("hadamard", h.hadamard)?;
    d.set_item("bits", c.bitmap.bits.clone())?;
    d.set_item("payload_bits_per_element", c.payload_bits_per_element())?;
    d.set_item("transform_fraction", c.transform_fraction())?;
    Ok(d)
}

/// Per-token entropy of normalized channel magnitudes, flat `B·S` list.
#[pyfunction]
#[pyo3(signature = (data, shape, config=None))]
fn token_entropy(data: Vec<f64>, shape: (usize, usize, usize), config: Option<PyRef<'_, PyQuantConfig>>) -> PyResult<Vec<f64>> {
    let t = tensor(data, shape)?;
    Ok(tahq_core::token_entropy(&t, &self::config(config)).map_err(err)?.values)
}

/// Entropy-ranked bit widths per token.
#[pyfunction]
#[pyo3(signature = (data, shape, config=None))]
fn allocate_bits(data: Vec<f64>, shape: (usize, usize, usize), config: Option<PyRef<'_, PyQuantConfig>>) -> PyResult<Vec<u8>> {
    let t = tensor(data, shape)?;
    let cfg = self::config(config).validated().map_err(err)?;
    let e = tahq_core::token_entropy(&t, &cfg).map_err(err)?;
    Ok(tahq_core::allocate_bits(&e, &cfg).bits)
}

/// `(is_outlier, pivot)` for one tile.
#[pyfunction]
#[pyo3(signature = (tile, config=None))]
fn detect_outlier(tile: Vec<f64>, config: Option<PyRef<'_, PyQuantConfig>>) -> PyResult<(bool, usize)> {
    tahq_core::detect_outlier(&tile, &self::config(config)).map_err(err)
}

/// Pivot swap followed by the orthonormal Hadamard transform.
#[pyfunction]
fn forward_hadamard(tile: Vec<f64>, pivot: usize) -> PyResult<Vec<f64>> {
    tahq_core::forward_hadamard(&tile, pivot).map_err(err)
}

#[pyfunction]
fn inverse_hadamard(tile: Vec<f64>, pivot: usize) -> PyResult<Vec<f64>> {
    tahq_core::inverse_hadamard(&tile, pivot).map_err(err)
}

/// Asymmetric min/max quantization: `(codes, offset, scale)`.
#[pyfunction]
fn quantize_tile(tile: Vec<f64>, bits: u8) -> PyResult<(Vec<u8>, f32, f32)> {
    let q = tahq_core::quantize_tile(&tile, bits).map_err(err)?;
    Ok((q.codes, q.offset, q.scale))
}

#[pyfunction]
fn dequantize_tile(codes: Vec<u8>, offset: f32, scale: f32, bits: u8) -> PyResult<Vec<f64>> {
    tahq_core::dequantize_tile(&codes, offset, scale, bits).map_err(err)
}

/// LSB-first bit packing.
#[pyfunction]
fn pack_codes<'py>(py: Python<'py>, codes: Vec<u8>, bits: u8) -> PyResult<Bound<'py, PyBytes>> {
    let packed = tahq_core::pack_codes(&codes, bits).map_err(err)?;
    Ok(PyBytes::new(py, &packed))
}

#[pyfunction]
fn unpack_codes(packed: &[u8], n: usize, bits: u8) -> PyResult<Vec<u8>> {
    tahq_core::unpack_codes(packed, n, bits).map_err(err)
}

/// Blob size accounting, reconstruction error and codec throughput.
#[pyfunction]
#[pyo3(signature = (data, shape, config=None, repeats=1))]
fn compression_report<'py>(
    py: Python<'py>,
    data: Vec<f32>,
    shape: (usize, usize, usize),
    config: Option<PyRef<'_, PyQuantConfig>>,
    repeats: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let t = tensor(data, shape)?;
    let r = core_report(&t, &self::config(config), repeats).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("blob_bytes", r.blob_bytes)?;
    d.set_item("payload_bits_per_element", r.payload_bits_per_element)?;
    d.set_item("bits_per_element", r.bits_per_element)?;
    d.set_item("ratio_vs_fp32", r.ratio_vs_fp32)?;
    d.set_item("transform_fraction", r.transform_fraction)?;
    d.set_item("relative_l2_error", r.relative_l2_error)?;
    d.set_item("encode_throughput", r.encode_throughput)?;
    d.set_item("decode_throughput", r.decode_throughput)?;
    Ok(d)
}

fn train_config(
    task: TaskConfig,
    config: Option<tahq_core::QuantConfig>,
    lr: f64,
    beta1: f64,
    backward_bits: u8,
) -> TrainConfig {
    let compression = match config {
        Some(forward) => Compression::Tah { forward, backward_bits },
        None => Compression::Passthrough,
    };
    TrainConfig {
        optimizer: OptimizerConfig::new(lr, beta1),
        ..TrainConfig::new(task, compression)
    }
}

/// Trains the two-stage simulator and returns one dict per step. With
/// `baseline=True` tensors cross the stage boundary uncompressed.
#[pyfunction]
#[pyo3(signature = (task="tiny", steps=100, seed=0, baseline=false, config=None, lr=0.1, beta1=0.1, backward_bits=6))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    task: &str,
    steps: usize,
    seed: u64,
    baseline: bool,
    config: Option<PyRef<'_, PyQuantConfig>>,
    lr: f64,
    beta1: f64,
    backward_bits: u8,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let quant = (!baseline).then(|| self::config(config));
    let cfg = TrainConfig {
        steps,
        ..train_config(parse_task(task, seed)?, quant, lr, beta1, backward_bits)
    };
    let out = py.detach(|| run_training(&cfg)).map_err(err)?;
    out.curve
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("loss", r.loss)?;
            d.set_item("bits_fw_mean", r.bits_fw_mean)?;
            d.set_item("bytes_fw", r.bytes_fw)?;
            d.set_item("bytes_bw", r.bytes_bw)?;
            Ok(d)
        })
        .collect()
}

/// Seed-averaged paired runs of `treatment` against `control` on one task.
/// Each row holds the step and the training and full-dataset losses of
/// both arms.
#[pyfunction]
#[pyo3(signature = (treatment, control, task="default", seeds=vec![0, 1, 2], at=vec![100, 300, 500], lr=0.1, beta1=0.1, backward_bits=6))]
#[allow(clippy::too_many_arguments)]
fn paired_comparison<'py>(
    py: Python<'py>,
    treatment: PyRef<'_, PyQuantConfig>,
    control: PyRef<'_, PyQuantConfig>,
    task: &str,
    seeds: Vec<u64>,
    at: Vec<usize>,
    lr: f64,
    beta1: f64,
    backward_bits: u8,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let task = parse_task(task, 0)?;
    let t = train_config(task.clone(), Some(treatment.core()), lr, beta1, backward_bits);
    let c = train_config(task, Some(control.core()), lr, beta1, backward_bits);
    let rows = py.detach(|| core_paired(&t, &c, &seeds, &at)).map_err(err)?;
    rows.iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("step", r.step)?;
            d.set_item("train_treatment", r.treatment.train)?;
            d.set_item("train_control", r.control.train)?;
            d.set_item("full_treatment", r.treatment.full)?;
            d.set_item("full_control", r.control.full)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
pub fn tahq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQuantConfig>()?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(blob_info, m)?)?;
    m.add_function(wrap_pyfunction!(token_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(allocate_bits, m)?)?;
    m.add_function(wrap_pyfunction!(detect_outlier, m)?)?;
    m.add_function(wrap_pyfunction!(forward_hadamard, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_hadamard, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_tile, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize_tile, m)?)?;
    m.add_function(wrap_pyfunction!(pack_codes, m)?)?;
    m.add_function(wrap_pyfunction!(unpack_codes, m)?)?;
    m.add_function(wrap_pyfunction!(compression_report, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(paired_comparison, m)?)?;
    Ok(())
}
