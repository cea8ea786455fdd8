use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{blob_layout, decode_blob, encode_blob, BlobLayout};
use crate::error::{Error, Result};
use crate::quantizer::{dequantize_activation, quantize_activation, QuantConfig};
use crate::tensor::{ActivationTensor, Shape};

/// Size accounting and codec throughput for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub shape: Shape,
    pub layout: BlobLayout,
    pub blob_bytes: usize,
    /// Code bits per element, no metadata or padding.
    pub payload_bits_per_element: f64,
    /// Whole blob bits per element.
    pub bits_per_element: f64,
    pub ratio_vs_fp32: f64,
    pub transform_fraction: f64,
    pub relative_l2_error: f64,
    /// Elements per second through quantize + encode.
    pub encode_throughput: f64,
    /// Elements per second through decode + dequantize.
    pub decode_throughput: f64,
}

pub fn compression_report(t: &ActivationTensor<f32>, cfg: &QuantConfig, repeats: usize) -> Result<CompressionReport> {
    let repeats = repeats.max(1);
    let numel = t.shape().numel();

    let start = Instant::now();
    let mut compressed = quantize_activation(t, cfg)?;
    let mut blob = encode_blob(&compressed)?;
    for _ in 1..repeats {
        compressed = quantize_activation(t, cfg)?;
        blob = encode_blob(&compressed)?;
    }
    let encode_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut restored: ActivationTensor<f32> = dequantize_activation(&decode_blob(&blob)?)?;
    for _ in 1..repeats {
        restored = dequantize_activation(&decode_blob(&blob)?)?;
    }
    let decode_secs = start.elapsed().as_secs_f64();

    let layout = blob_layout(&compressed);
    if layout.total() != blob.len() {
        return Err(Error::CorruptPayload(format!(
            "blob is {} bytes but sections add up to {}",
            blob.len(),
            layout.total()
        )));
    }
    let throughput = |secs: f64| (numel * repeats) as f64 / secs.max(1e-12);
    Ok(CompressionReport {
        shape: t.shape(),
        layout,
        blob_bytes: blob.len(),
        payload_bits_per_element: compressed.payload_bits_per_element(),
        bits_per_element: blob.len() as f64 * 8.0 / numel as f64,
        ratio_vs_fp32: (numel * 4) as f64 / blob.len() as f64,
        transform_fraction: compressed.transform_fraction(),
        relative_l2_error: t.relative_l2_error(&restored)?,
        encode_throughput: throughput(encode_secs),
        decode_throughput: throughput(decode_secs),
    })
}

/// I.i.d. standard-normal tensor.
pub fn gaussian_tensor(shape: Shape, seed: u64) -> Result<ActivationTensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ActivationTensor::from_fn(shape, |_, _, _| StandardNormal.sample(&mut rng))
}

/// Multiplies the listed channels of every token by `gain`.
pub fn inject_outlier_channels(t: &mut ActivationTensor<f32>, channels: &[usize], gain: f32) {
    let c = t.shape().channels;
    for token in t.data_mut().chunks_exact_mut(c) {
        for &k in channels {
            token[k] *= gain;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accounting_at_p08() {
        let t = gaussian_tensor(Shape::new(2, 8, 128), 1).unwrap();
        let r = compression_report(&t, &QuantConfig::default(), 1).unwrap();
        assert!((r.payload_bits_per_element - 3.8125).abs() < 1e-12); // 13 of 16 tokens at 4 bits
        assert_eq!(r.blob_bytes, r.layout.total());
        assert!(r.ratio_vs_fp32 > 5.0);
    }

    #[test]
    fn outliers_raise_transform_fraction() {
        let shape = Shape::new(2, 16, 256);
        let plain = gaussian_tensor(shape, 3).unwrap();
        let mut spiky = plain.clone();
        let channels: Vec<usize> = (0..256).step_by(32).map(|c| c + 7).collect();
        inject_outlier_channels(&mut spiky, &channels, 20.0);
        let cfg = QuantConfig::default();
        let a = compression_report(&plain, &cfg, 1).unwrap();
        let b = compression_report(&spiky, &cfg, 1).unwrap();
        assert!(a.transform_fraction < 0.2, "gaussian fraction {}", a.transform_fraction);
        assert!(b.transform_fraction > 0.7, "outlier fraction {}", b.transform_fraction);
    }
}
