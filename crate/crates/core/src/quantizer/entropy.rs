use crate::error::Result;
use crate::quantizer::QuantConfig;
use crate::tensor::{ActivationTensor, Real};

/// Per-token entropy of the normalized channel magnitudes, `B × S` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub batch: usize,
    pub seq: usize,
    pub values: Vec<f64>,
}

impl EntropyMap {
    /// Builds a map directly from flat token entropies.
    pub fn from_values(batch: usize, seq: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), batch * seq, "entropy map length mismatch");
        Self { batch, seq, values }
    }

    pub fn tokens(&self) -> usize {
        self.values.len()
    }
}

/// Per-token bit widths, `B × S` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMap {
    pub batch: usize,
    pub seq: usize,
    pub bits: Vec<u8>,
}

impl BitMap {
    pub fn uniform(batch: usize, seq: usize, bits: u8) -> Self {
        Self {
            batch,
            seq,
            bits: vec![bits; batch * seq],
        }
    }

    pub fn tokens(&self) -> usize {
        self.bits.len()
    }

    pub fn count(&self, bits: u8) -> usize {
        self.bits.iter().filter(|&&b| b == bits).count()
    }

    /// Average code width over tokens.
    pub fn mean_bits(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().map(|&b| b as f64).sum::<f64>() / self.bits.len() as f64
    }
}

/// `round-half-up(p · tokens)`, clamped to `tokens`. Products within a few
/// ulps below a half count as the half, so `0.575 · 180` gives 104.
pub fn high_bit_count(high_frac: f64, tokens: usize) -> usize {
    let x = high_frac.clamp(0.0, 1.0) * tokens as f64;
    let n = (x + 0.5 + 4.0 * f64::EPSILON * x).floor() as usize;
    n.min(tokens)
}

/// Entropy `H = −Σ p_k log(p_k + ς)` with `p_k = |a_k| / (‖a‖₁ + ε)` for
/// every token of `t`. Accumulation is done in `f64`.
pub fn token_entropy<T: Real>(t: &ActivationTensor<T>, cfg: &QuantConfig) -> Result<EntropyMap> {
    t.ensure_finite()?;
    let shape = t.shape();
    let values = t
        .tokens()
        .map(|token| {
            let l1: f64 = token.iter().map(|v| v.as_f64().abs()).sum();
            let denom = l1 + cfg.eps;
            -token
                .iter()
                .map(|v| {
                    let p = v.as_f64().abs() / denom;
                    p * (p + cfg.varsigma).ln()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(EntropyMap {
        batch: shape.batch,
        seq: shape.seq,
        values,
    })
}

/// Gives `b_hi` to the `round-half-up(p·B·S)` highest-entropy tokens and
/// `b_lo` to the rest. Equal entropies rank the lower flat index first.
pub fn allocate_bits(e: &EntropyMap, cfg: &QuantConfig) -> BitMap {
    let n = e.tokens();
    let n_hi = high_bit_count(cfg.high_frac, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| e.values[b].total_cmp(&e.values[a]).then(a.cmp(&b)));
    let mut bits = vec![cfg.b_lo; n];
    for &i in &order[..n_hi] {
        bits[i] = cfg.b_hi;
    }
    BitMap {
        batch: e.batch,
        seq: e.seq,
        bits,
    }
}

/// Entropy-blind allocation with the same `b_hi` count: token `i` is high
/// when `⌊(i+1)·n_hi/n⌋ > ⌊i·n_hi/n⌋`.
pub(crate) fn strided_bits(batch: usize, seq: usize, cfg: &QuantConfig) -> BitMap {
    let n = batch * seq;
    let n_hi = high_bit_count(cfg.high_frac, n);
    let bits = (0..n)
        .map(|i| {
            if (i + 1) * n_hi / n > i * n_hi / n {
                cfg.b_hi
            } else {
                cfg.b_lo
            }
        })
        .collect();
    BitMap { batch, seq, bits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn single_token(v: &[f64]) -> ActivationTensor<f64> {
        ActivationTensor::new(Shape::new(1, 1, v.len()), v.to_vec()).unwrap()
    }

    fn entropy_of(v: &[f64]) -> f64 {
        token_entropy(&single_token(v), &QuantConfig::default()).unwrap().values[0]
    }

    #[test]
    fn one_hot_has_zero_entropy() {
        assert!(entropy_of(&[5.0, 0.0, 0.0, 0.0]).abs() < 1e-6);
    }

    #[test]
    fn uniform_has_log_c_entropy() {
        assert!((entropy_of(&[2.5; 4]) - 4f64.ln()).abs() < 1e-6);
        assert!((entropy_of(&[-1.0, 1.0, -1.0, 1.0]) - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn three_one_entropy_matches_oracle() {
        // -(0.75 ln 0.75 + 0.25 ln 0.25), evaluated independently in f64.
        let oracle = -(0.75f64 * 0.75f64.ln() + 0.25f64 * 0.25f64.ln());
        assert!((oracle - 0.5623).abs() < 1e-4);
        assert!((entropy_of(&[3.0, 1.0, 0.0, 0.0]) - oracle).abs() < 1e-6);
    }

    #[test]
    fn zero_token_is_finite() {
        assert_eq!(entropy_of(&[0.0; 8]), 0.0);
    }

    #[test]
    fn rejects_nan() {
        let t = ActivationTensor::<f32>::new(Shape::new(1, 1, 2), vec![f32::INFINITY, 0.0]).unwrap();
        assert!(token_entropy(&t, &QuantConfig::default()).is_err());
    }

    #[test]
    fn top_half_by_entropy() {
        let e = EntropyMap::from_values(1, 4, vec![0.1, 0.9, 0.5, 0.7]);
        let cfg = QuantConfig::default().with_high_frac(0.5);
        assert_eq!(allocate_bits(&e, &cfg).bits, vec![3, 4, 3, 4]);
    }

    #[test]
    fn p_one_gives_all_high() {
        let e = EntropyMap::from_values(2, 2, vec![0.3, 0.1, 0.2, 0.0]);
        let cfg = QuantConfig::default().with_high_frac(1.0);
        assert_eq!(allocate_bits(&e, &cfg).bits, vec![4; 4]);
        let cfg = QuantConfig::default().with_high_frac(0.0);
        assert_eq!(allocate_bits(&e, &cfg).bits, vec![3; 4]);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let e = EntropyMap::from_values(1, 3, vec![0.5, 0.5, 0.2]);
        let cfg = QuantConfig::default().with_high_frac(1.0 / 3.0);
        assert_eq!(allocate_bits(&e, &cfg).bits, vec![4, 3, 3]);
    }

    #[test]
    fn round_half_up_count() {
        assert_eq!(high_bit_count(0.5, 3), 2);
        assert_eq!(high_bit_count(0.8, 32), 26);
        assert_eq!(high_bit_count(0.25, 2), 1);
        assert_eq!(high_bit_count(0.0, 7), 0);
        assert_eq!(high_bit_count(1.0, 7), 7);
        assert_eq!(high_bit_count(0.575, 180), 104);
        assert_eq!(high_bit_count(0.3, 5), 2);
        assert_eq!(high_bit_count(0.1, 25), 3);
    }

    #[test]
    fn strided_matches_budget() {
        let cfg = QuantConfig::default();
        for n in 1..50 {
            let map = strided_bits(1, n, &cfg);
            assert_eq!(map.count(cfg.b_hi), high_bit_count(cfg.high_frac, n));
        }
    }
}
