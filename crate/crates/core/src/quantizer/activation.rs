use crate::codec::{pack_codes, segment_len, unpack_codes};
use crate::error::{Error, Result};
use crate::quantizer::entropy::strided_bits;
use crate::quantizer::{
    allocate_bits, dequantize_tile, detect_outlier, forward_hadamard, inverse_hadamard,
    quantize_tile, token_entropy, BitAllocation, BitMap, QuantConfig,
};
use crate::tensor::{ActivationTensor, Real, Shape};

/// Shape and the parts of the config a decoder needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub shape: Shape,
    pub tile_size: usize,
    pub b_hi: u8,
    pub b_lo: u8,
    pub adaptive_alloc: bool,
    pub hadamard: bool,
}

impl Header {
    pub fn tiles_per_token(&self) -> usize {
        self.shape.channels / self.tile_size
    }

    pub fn tile_count(&self) -> usize {
        self.shape.tokens() * self.tiles_per_token()
    }
}

/// Per-tile side information. `pivot` is present iff the tile went through
/// the pivot-swap Hadamard transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileMeta {
    pub pivot: Option<u16>,
    /// Tile minimum in the quantized domain.
    pub offset: f32,
    pub scale: f32,
    pub bits: u8,
}

impl TileMeta {
    pub fn transformed(&self) -> bool {
        self.pivot.is_some()
    }
}

/// Structured compressed activation. Tiles are stored in `(b, s, t)`
/// row-major order, each payload segment byte-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedActivation {
    pub header: Header,
    pub bitmap: BitMap,
    pub metas: Vec<TileMeta>,
    pub payload: Vec<u8>,
}

impl CompressedActivation {
    /// Mean code bits per element, excluding metadata and alignment padding.
    pub fn payload_bits_per_element(&self) -> f64 {
        self.bitmap.mean_bits()
    }

    /// Fraction of tiles that were Hadamard-transformed.
    pub fn transform_fraction(&self) -> f64 {
        if self.metas.is_empty() {
            return 0.0;
        }
        self.metas.iter().filter(|m| m.transformed()).count() as f64 / self.metas.len() as f64
    }

    /// Checks that bitmap, metadata and payload agree with the header.
    pub fn check_consistency(&self) -> Result<()> {
        let h = &self.header;
        h.shape.validate()?;
        if h.tile_size == 0 || h.shape.channels % h.tile_size != 0 {
            return Err(Error::CorruptPayload(format!(
                "tile size {} does not divide {} channels",
                h.tile_size, h.shape.channels
            )));
        }
        if self.bitmap.tokens() != h.shape.tokens() {
            return Err(Error::CorruptPayload(format!(
                "bitmap has {} tokens, header says {}",
                self.bitmap.tokens(),
                h.shape.tokens()
            )));
        }
        if self.metas.len() != h.tile_count() {
            return Err(Error::CorruptPayload(format!(
                "{} tile metas for {} tiles",
                self.metas.len(),
                h.tile_count()
            )));
        }
        let per_token = h.tiles_per_token();
        let mut expected = 0;
        for (i, meta) in self.metas.iter().enumerate() {
            let token_bits = self.bitmap.bits[i / per_token];
            if meta.bits != token_bits {
                return Err(Error::CorruptPayload(format!(
                    "tile {i} has {} bits, its token has {token_bits}",
                    meta.bits
                )));
            }
            if !(1..=8).contains(&meta.bits) {
                return Err(Error::CorruptPayload(format!("tile {i} bit width {}", meta.bits)));
            }
            if let Some(p) = meta.pivot {
                if p as usize >= h.tile_size {
                    return Err(Error::CorruptPayload(format!("tile {i} pivot {p} out of range")));
                }
            }
            if !(meta.scale >= 0.0) || !meta.offset.is_finite() || !meta.scale.is_finite() {
                return Err(Error::CorruptPayload(format!("tile {i} has invalid scale/offset")));
            }
            expected += segment_len(h.tile_size, meta.bits);
        }
        if self.payload.len() != expected {
            return Err(Error::CorruptPayload(format!(
                "payload is {} bytes, metadata implies {expected}",
                self.payload.len()
            )));
        }
        Ok(())
    }
}

fn bit_map<T: Real>(t: &ActivationTensor<T>, cfg: &QuantConfig) -> Result<BitMap> {
    let shape = t.shape();
    Ok(match cfg.allocation {
        BitAllocation::Entropy => allocate_bits(&token_entropy(t, cfg)?, cfg),
        BitAllocation::HighOnly => BitMap::uniform(shape.batch, shape.seq, cfg.b_hi),
        BitAllocation::Strided => strided_bits(shape.batch, shape.seq, cfg),
    })
}

/// Full TAH-Quant compression of one activation tensor.
///
/// Bit widths are allocated from the raw values first; each tile is then
/// checked for an outlier and, when one is found and the transform is
/// enabled, pivot-swapped and Hadamard-transformed before asymmetric
/// quantization at its token's width.
pub fn quantize_activation<T: Real>(
    t: &ActivationTensor<T>,
    cfg: &QuantConfig,
) -> Result<CompressedActivation> {
    let cfg = cfg.validated()?;
    let shape = t.shape();
    let g = cfg.tile_size;
    if shape.channels % g != 0 {
        return Err(Error::Shape(format!(
            "tile size {g} does not divide {} channels",
            shape.channels
        )));
    }
    t.ensure_finite()?;

    let bitmap = bit_map(t, &cfg)?;
    let tiles = shape.tokens() * (shape.channels / g);
    let mut metas = Vec::with_capacity(tiles);
    let mut payload = Vec::new();
    for (token, values) in t.tokens().enumerate() {
        let bits = bitmap.bits[token];
        for tile in values.chunks_exact(g) {
            let (outlier, pivot) = detect_outlier(tile, &cfg)?;
            let (q, pivot) = if outlier && cfg.hadamard {
                (quantize_tile(&forward_hadamard(tile, pivot)?, bits)?, Some(pivot as u16))
            } else {
                (quantize_tile(tile, bits)?, None)
            };
            payload.extend_from_slice(&pack_codes(&q.codes, bits)?);
            metas.push(TileMeta {
                pivot,
                offset: q.offset,
                scale: q.scale,
                bits,
            });
        }
    }

    Ok(CompressedActivation {
        header: Header {
            shape,
            tile_size: g,
            b_hi: cfg.b_hi,
            b_lo: cfg.b_lo,
            adaptive_alloc: cfg.adaptive_alloc(),
            hadamard: cfg.hadamard,
        },
        bitmap,
        metas,
        payload,
    })
}

/// Inverse of [`quantize_activation`] (and [`naive_quantize`]).
pub fn dequantize_activation<T: Real>(c: &CompressedActivation) -> Result<ActivationTensor<T>> {
    c.check_consistency()?;
    let h = &c.header;
    let g = h.tile_size;
    let mut data = Vec::with_capacity(h.shape.numel());
    let mut cursor = 0;
    for meta in &c.metas {
        let len = segment_len(g, meta.bits);
        let codes = unpack_codes(&c.payload[cursor..cursor + len], g, meta.bits)?;
        cursor += len;
        let values: Vec<T> = dequantize_tile(&codes, meta.offset, meta.scale, meta.bits)?;
        match meta.pivot {
            Some(p) => data.extend(inverse_hadamard(&values, p as usize)?),
            None => data.extend(values),
        }
    }
    ActivationTensor::new(h.shape, data)
}

/// Plain per-tile asymmetric quantization at a single bit width: no entropy
/// allocation and no transform. Used for activation gradients on the
/// backward path.
pub fn naive_quantize<T: Real>(
    t: &ActivationTensor<T>,
    bits: u8,
    tile_size: usize,
) -> Result<CompressedActivation> {
    let cfg = QuantConfig {
        tile_size,
        high_frac: 1.0,
        b_hi: bits,
        b_lo: bits,
        allocation: BitAllocation::HighOnly,
        hadamard: false,
        ..QuantConfig::default()
    };
    quantize_activation(t, &cfg)
}

pub fn naive_dequantize<T: Real>(c: &CompressedActivation) -> Result<ActivationTensor<T>> {
    dequantize_activation(c)
}
