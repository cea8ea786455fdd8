use crate::error::{Error, Result};

/// How per-token bit widths are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitAllocation {
    /// Top-p tokens by entropy get `b_hi`, the rest `b_lo`.
    Entropy,
    /// Every token gets `b_hi` (adaptive allocation off).
    HighOnly,
    /// Same `b_hi` token count as [`BitAllocation::Entropy`], spread evenly
    /// over flat token indices without looking at the values. Budget-matched
    /// control for allocation ablations.
    Strided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    /// Channels per tile (G). Power of two, at least 2.
    pub tile_size: usize,
    /// Fraction of tokens quantized at `b_hi`.
    pub high_frac: f64,
    pub b_hi: u8,
    pub b_lo: u8,
    /// Outlier threshold on the top-two magnitude ratio.
    pub tau: f64,
    /// Added to the L1 norm when normalizing magnitudes.
    pub eps: f64,
    /// Added inside the entropy logarithm.
    pub varsigma: f64,
    /// Added to the second-largest magnitude in the outlier ratio.
    pub varrho: f64,
    pub allocation: BitAllocation,
    pub hadamard: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            tile_size: 32,
            high_frac: 0.8,
            b_hi: 4,
            b_lo: 3,
            tau: 2.0,
            eps: 1e-6,
            varsigma: 1e-12,
            varrho: 1e-8,
            allocation: BitAllocation::Entropy,
            hadamard: true,
        }
    }
}

impl QuantConfig {
    pub fn with_tile_size(mut self, tile_size: usize) -> Self {
        self.tile_size = tile_size;
        self
    }

    pub fn with_high_frac(mut self, p: f64) -> Self {
        self.high_frac = p;
        self
    }

    pub fn with_hadamard(mut self, on: bool) -> Self {
        self.hadamard = on;
        self
    }

    pub fn with_allocation(mut self, allocation: BitAllocation) -> Self {
        self.allocation = allocation;
        self
    }

    pub fn with_bits(mut self, b_hi: u8, b_lo: u8) -> Self {
        self.b_hi = b_hi;
        self.b_lo = b_lo;
        self
    }

    pub fn adaptive_alloc(&self) -> bool {
        self.allocation == BitAllocation::Entropy
    }

    /// Checks every invariant and returns a copy with `high_frac` clamped to `[0, 1]`.
    pub fn validated(&self) -> Result<Self> {
        let mut cfg = *self;
        if cfg.tile_size < 2 || !cfg.tile_size.is_power_of_two() {
            return Err(Error::UnsupportedTileSize(cfg.tile_size));
        }
        if cfg.tile_size > 1 << 15 {
            return Err(Error::InvalidConfig(format!(
                "tile size {} does not fit the 16-bit header field",
                cfg.tile_size
            )));
        }
        if !(2 <= cfg.b_lo && cfg.b_lo <= cfg.b_hi && cfg.b_hi <= 8) {
            return Err(Error::InvalidConfig(format!(
                "bit widths must satisfy 2 <= b_lo <= b_hi <= 8, got b_lo={} b_hi={}",
                cfg.b_lo, cfg.b_hi
            )));
        }
        if !cfg.high_frac.is_finite() {
            return Err(Error::InvalidConfig("high_frac must be finite".into()));
        }
        cfg.high_frac = cfg.high_frac.clamp(0.0, 1.0);
        if !(cfg.tau > 1.0) || !cfg.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be > 1, got {}", cfg.tau)));
        }
        for (name, v) in [("eps", cfg.eps), ("varsigma", cfg.varsigma), ("varrho", cfg.varrho)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(cfg)
    }
}
