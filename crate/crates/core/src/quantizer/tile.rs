use crate::error::{Error, Result};
use crate::quantizer::QuantConfig;
use crate::tensor::Real;

/// Output of [`quantize_tile`]. `offset` and `scale` are kept at 32-bit
/// precision because that is what goes on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTile {
    pub codes: Vec<u8>,
    pub offset: f32,
    pub scale: f32,
}

/// Top-two magnitude ratio test. Returns `(r > τ, argmax |α_k|)`, with the
/// argmax tie going to the lowest index.
pub fn detect_outlier<T: Real>(tile: &[T], cfg: &QuantConfig) -> Result<(bool, usize)> {
    if tile.len() < 2 {
        return Err(Error::InvalidTile(tile.len()));
    }
    let mut pivot = 0;
    let mut first = tile[0].as_f64().abs();
    for (k, v) in tile.iter().enumerate().skip(1) {
        let m = v.as_f64().abs();
        if m > first {
            first = m;
            pivot = k;
        }
    }
    let second = tile
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != pivot)
        .map(|(_, v)| v.as_f64().abs())
        .fold(0.0f64, f64::max);
    let r = first / (second + cfg.varrho);
    Ok((r > cfg.tau, pivot))
}

/// Min/max affine quantization onto `{0, …, 2^bits − 1}` with
/// round-half-away-from-zero. A constant tile yields `scale = 0` and all-zero
/// codes.
pub fn quantize_tile<T: Real>(tile: &[T], bits: u8) -> Result<QuantizedTile> {
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidConfig(format!("bit width {bits} outside 1..=8")));
    }
    if tile.is_empty() {
        return Ok(QuantizedTile {
            codes: Vec::new(),
            offset: 0.0,
            scale: 0.0,
        });
    }
    if let Some(i) = tile.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite tile value at index {i}")));
    }
    let (lo, hi) = tile.iter().fold((tile[0], tile[0]), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let levels = ((1u32 << bits) - 1) as f64;
    let offset = lo.as_f32();
    let scale = ((hi - lo).as_f64() / levels) as f32;
    if !offset.is_finite() || !scale.is_finite() {
        return Err(Error::InvalidInput(format!(
            "tile range [{lo:?}, {hi:?}] is not representable at 32-bit precision"
        )));
    }
    if hi == lo || scale == 0.0 {
        return Ok(QuantizedTile {
            codes: vec![0; tile.len()],
            offset,
            scale: 0.0,
        });
    }
    let off = T::from_f32(offset);
    let step = T::from_f32(scale);
    let max_code = T::from_f64(levels);
    let codes = tile
        .iter()
        .map(|&x| ((x - off) / step).round().max(T::zero()).min(max_code).as_f64() as u8)
        .collect();
    Ok(QuantizedTile {
        codes,
        offset,
        scale,
    })
}

/// `x̂ = code · scale + offset`.
pub fn dequantize_tile<T: Real>(codes: &[u8], offset: f32, scale: f32, bits: u8) -> Result<Vec<T>> {
    let limit = 1u32 << bits;
    if let Some(&c) = codes.iter().find(|&&c| c as u32 >= limit) {
        return Err(Error::CorruptPayload(format!("code {c} does not fit in {bits} bits")));
    }
    let off = T::from_f32(offset);
    let step = T::from_f32(scale);
    Ok(codes.iter().map(|&c| T::from_f64(c as f64) * step + off).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> QuantConfig {
        QuantConfig::default()
    }

    #[test]
    fn outlier_examples() {
        assert_eq!(detect_outlier(&[10.0f32, 1.0, 1.0, 1.0], &cfg()).unwrap(), (true, 0));
        assert_eq!(detect_outlier(&[1.0f32, 1.0, 1.0, 1.0], &cfg()).unwrap(), (false, 0));
        assert_eq!(detect_outlier(&[-8.0f32, 4.0, 1.0, 0.0], &cfg()).unwrap(), (false, 0));
        assert_eq!(detect_outlier(&[0.1f32, -9.0, 0.2, 0.3], &cfg()).unwrap(), (true, 1));
    }

    #[test]
    fn outlier_needs_two_elements() {
        assert!(matches!(detect_outlier(&[1.0f32], &cfg()), Err(Error::InvalidTile(1))));
    }

    #[test]
    fn all_zero_tile_is_not_an_outlier() {
        assert_eq!(detect_outlier(&[0.0f32; 8], &cfg()).unwrap(), (false, 0));
    }

    #[test]
    fn constant_tile() {
        let q = quantize_tile(&[5.0f32; 4], 3).unwrap();
        assert_eq!(q.codes, vec![0; 4]);
        assert_eq!(q.offset, 5.0);
        assert_eq!(q.scale, 0.0);
        let back: Vec<f32> = dequantize_tile(&q.codes, q.offset, q.scale, 3).unwrap();
        assert_eq!(back, vec![5.0; 4]);
    }

    #[test]
    fn endpoints_are_exact() {
        let q = quantize_tile(&[0.0f32, 7.0], 3).unwrap();
        assert_eq!(q.scale, 1.0);
        assert_eq!(q.codes, vec![0, 7]);
        let back: Vec<f32> = dequantize_tile(&q.codes, q.offset, q.scale, 3).unwrap();
        assert_eq!(back, vec![0.0, 7.0]);
    }

    #[test]
    fn rounds_half_away_from_zero() {
        // scale 1: 0.5 -> 1, 2.5 -> 3.
        let q = quantize_tile(&[0.0f32, 0.5, 2.5, 7.0], 3).unwrap();
        assert_eq!(q.codes, vec![0, 1, 3, 7]);
    }

    #[test]
    fn rejects_out_of_range_codes() {
        assert!(matches!(
            dequantize_tile::<f32>(&[0, 8], 0.0, 1.0, 3),
            Err(Error::CorruptPayload(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(quantize_tile(&[1.0f32, f32::NAN], 4).is_err());
        assert!(quantize_tile(&[f32::MAX, -f32::MAX], 4).is_err());
    }

    #[test]
    fn half_scale_bound_on_random_tiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for bits in [3u8, 4, 6, 8] {
            for _ in 0..200 {
                let tile: Vec<f32> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
                let q = quantize_tile(&tile, bits).unwrap();
                let back: Vec<f32> = dequantize_tile(&q.codes, q.offset, q.scale, bits).unwrap();
                let range = (tile.iter().cloned().fold(f32::MIN, f32::max)
                    - tile.iter().cloned().fold(f32::MAX, f32::min)) as f64;
                let tol = q.scale as f64 / 2.0 + 4.0 * f32::EPSILON as f64 * range;
                for (x, y) in tile.iter().zip(&back) {
                    assert!(((x - y) as f64).abs() <= tol);
                }
            }
        }
    }
}
