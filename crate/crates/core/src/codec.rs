//! Sub-byte code packing and the `.tahq` blob format.
//!
//! Blob layout, all integers little-endian:
//!
//! ```text
//! header   22 bytes  "TAHQ" | version u8 | B u32 | S u32 | C u32 | G u16
//!                    | b_hi u8 | b_lo u8 | flags u8 (bit0 adaptive, bit1 hadamard)
//! bitmap   ceil(B·S/8) bytes, bit i set when token i uses b_hi
//! metas    per tile in (b, s, t) order:
//!          flag u8 (bit0 transformed) | pivot u16 if transformed | offset f32 | scale f32
//! payload  per tile in the same order, ceil(G·bits/8) bytes each
//! ```
//!
//! Within a payload segment, code `k` occupies bits `[k·b, (k+1)·b)` with
//! bit 0 being the least significant bit of byte 0.

use crate::error::{Error, Result};
use crate::quantizer::{BitMap, CompressedActivation, Header, TileMeta};
use crate::tensor::Shape;

pub const BLOB_MAGIC: &[u8; 4] = b"TAHQ";
pub const BLOB_VERSION: u8 = 1;
pub const BLOB_HEADER_LEN: usize = 22;

const FLAG_ADAPTIVE: u8 = 0b01;
const FLAG_HADAMARD: u8 = 0b10;
const META_TRANSFORMED: u8 = 0b1;

/// Bytes taken by one tile's packed codes.
pub fn segment_len(tile_size: usize, bits: u8) -> usize {
    (tile_size * bits as usize).div_ceil(8)
}

#[inline]
fn check_bits(bits: u8) -> Result<()> {
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidConfig(format!("bit width {bits} outside 1..=8")));
    }
    Ok(())
}

/// Packs `codes` at `bits` bits each, LSB first. Padding bits are zero.
pub fn pack_codes(codes: &[u8], bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let mut out = vec![0u8; segment_len(codes.len(), bits)];
    pack_codes_into(codes, bits, &mut out)?;
    Ok(out)
}

/// [`pack_codes`] into the first `segment_len(codes.len(), bits)` bytes of
/// `out`. Returns the number of bytes written.
#[inline(always)]
pub fn pack_codes_into(codes: &[u8], bits: u8, out: &mut [u8]) -> Result<usize> {
    check_bits(bits)?;
    let len = segment_len(codes.len(), bits);
    if out.len() < len {
        return Err(Error::Truncated {
            needed: len,
            available: out.len(),
        });
    }
    if bits < 8 && codes.iter().fold(0u8, |m, &c| m | c) >> bits != 0 {
        let &code = codes.iter().find(|&&c| c >> bits != 0).unwrap();
        return Err(Error::Range {
            code: code as u32,
            bits,
        });
    }
    let bits = bits as u32;
    let mut acc = 0u64;
    let mut filled = 0u32;
    let mut pos = 0;
    for &code in codes {
        acc |= (code as u64) << filled;
        filled += bits;
        if filled >= 32 {
            out[pos..pos + 4].copy_from_slice(&(acc as u32).to_le_bytes());
            pos += 4;
            acc >>= 32;
            filled -= 32;
        }
    }
    while pos < len {
        out[pos] = acc as u8;
        pos += 1;
        acc >>= 8;
    }
    Ok(len)
}

/// Reads `n` codes of `bits` bits each from the front of `bytes`.
pub fn unpack_codes(bytes: &[u8], n: usize, bits: u8) -> Result<Vec<u8>> {
    let mut out = vec![0u8; n];
    unpack_codes_into(bytes, bits, &mut out)?;
    Ok(out)
}

/// [`unpack_codes`] filling all of `out`.
#[inline(always)]
pub fn unpack_codes_into(bytes: &[u8], bits: u8, out: &mut [u8]) -> Result<()> {
    check_bits(bits)?;
    let needed = segment_len(out.len(), bits);
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    // A code spans at most two bytes.
    let b = bits as usize;
    let mask = (1u16 << b) - 1;
    let bytes = &bytes[..needed];
    for (k, slot) in out.iter_mut().enumerate() {
        let off = k * b;
        let i = off / 8;
        let hi = bytes.get(i + 1).copied().unwrap_or(0) as u16;
        let window = bytes[i] as u16 | hi << 8;
        *slot = (window >> (off % 8) & mask) as u8;
    }
    Ok(())
}

/// Byte counts of each blob section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobLayout {
    pub header: usize,
    pub bitmap: usize,
    pub meta: usize,
    pub payload: usize,
}

impl BlobLayout {
    pub fn total(&self) -> usize {
        self.header + self.bitmap + self.meta + self.payload
    }
}

fn meta_len(meta: &TileMeta) -> usize {
    if meta.transformed() {
        11
    } else {
        9
    }
}

/// Closed-form section sizes for `c`, computed without encoding.
pub fn blob_layout(c: &CompressedActivation) -> BlobLayout {
    let g = c.header.tile_size;
    BlobLayout {
        header: BLOB_HEADER_LEN,
        bitmap: c.header.shape.tokens().div_ceil(8),
        meta: c.metas.iter().map(meta_len).sum(),
        payload: c.metas.iter().map(|m| segment_len(g, m.bits)).sum(),
    }
}

fn dim_u32(v: usize, name: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{name}={v} does not fit in u32")))
}

pub fn encode_blob(c: &CompressedActivation) -> Result<Vec<u8>> {
    c.check_consistency()?;
    let h = &c.header;
    let g = u16::try_from(h.tile_size)
        .map_err(|_| Error::InvalidInput(format!("tile size {} does not fit in u16", h.tile_size)))?;
    for (i, &b) in c.bitmap.bits.iter().enumerate() {
        if b != h.b_hi && b != h.b_lo {
            return Err(Error::CorruptPayload(format!(
                "token {i} has width {b}, expected {} or {}",
                h.b_hi, h.b_lo
            )));
        }
    }

    let layout = blob_layout(c);
    let mut out = Vec::with_capacity(layout.total());
    out.extend_from_slice(BLOB_MAGIC);
    out.push(BLOB_VERSION);
    out.extend_from_slice(&dim_u32(h.shape.batch, "B")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(h.shape.seq, "S")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(h.shape.channels, "C")?.to_le_bytes());
    out.extend_from_slice(&g.to_le_bytes());
    out.push(h.b_hi);
    out.push(h.b_lo);
    let mut flags = 0;
    if h.adaptive_alloc {
        flags |= FLAG_ADAPTIVE;
    }
    if h.hadamard {
        flags |= FLAG_HADAMARD;
    }
    out.push(flags);

    let mut bitmap = vec![0u8; layout.bitmap];
    for (i, &b) in c.bitmap.bits.iter().enumerate() {
        if b == h.b_hi {
            bitmap[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bitmap);

    for meta in &c.metas {
        match meta.pivot {
            Some(p) => {
                out.push(META_TRANSFORMED);
                out.extend_from_slice(&p.to_le_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&meta.offset.to_le_bytes());
        out.extend_from_slice(&meta.scale.to_le_bytes());
    }
    out.extend_from_slice(&c.payload);
    debug_assert_eq!(out.len(), layout.total());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_blob(bytes: &[u8]) -> Result<CompressedActivation> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != BLOB_MAGIC {
        return Err(Error::Format("bad magic, expected TAHQ".into()));
    }
    let version = r.u8()?;
    if version != BLOB_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BLOB_VERSION,
        });
    }
    let shape = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let tile_size = r.u16()? as usize;
    let b_hi = r.u8()?;
    let b_lo = r.u8()?;
    let flags = r.u8()?;
    if flags & !(FLAG_ADAPTIVE | FLAG_HADAMARD) != 0 {
        return Err(Error::Format(format!("reserved flag bits set: {flags:#04x}")));
    }
    shape.validate().map_err(|e| Error::Format(e.to_string()))?;
    if tile_size == 0 || shape.channels % tile_size != 0 {
        return Err(Error::Format(format!(
            "tile size {tile_size} does not divide {} channels",
            shape.channels
        )));
    }
    if !(1..=8).contains(&b_lo) || !(1..=8).contains(&b_hi) {
        return Err(Error::Format(format!("bit widths {b_hi}/{b_lo} outside 1..=8")));
    }
    let header = Header {
        shape,
        tile_size,
        b_hi,
        b_lo,
        adaptive_alloc: flags & FLAG_ADAPTIVE != 0,
        hadamard: flags & FLAG_HADAMARD != 0,
    };

    let tokens = shape.tokens();
    let raw_bitmap = r.take(tokens.div_ceil(8))?;
    let bits: Vec<u8> = (0..tokens)
        .map(|i| if raw_bitmap[i / 8] >> (i % 8) & 1 == 1 { b_hi } else { b_lo })
        .collect();
    if tokens % 8 != 0 && raw_bitmap[tokens / 8] >> (tokens % 8) != 0 {
        return Err(Error::Format("non-zero bitmap padding".into()));
    }

    let per_token = header.tiles_per_token();
    let tiles = header.tile_count();
    let mut metas = Vec::with_capacity(tiles);
    for i in 0..tiles {
        let flag = r.u8()?;
        let pivot = match flag {
            0 => None,
            META_TRANSFORMED => Some(r.u16()?),
            other => return Err(Error::Format(format!("tile {i} has meta flag {other:#04x}"))),
        };
        metas.push(TileMeta {
            pivot,
            offset: r.f32()?,
            scale: r.f32()?,
            bits: bits[i / per_token],
        });
    }

    let payload_len: usize = metas.iter().map(|m| segment_len(tile_size, m.bits)).sum();
    let payload = r.take(payload_len)?.to_vec();
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }

    let c = CompressedActivation {
        header,
        bitmap: BitMap {
            batch: shape.batch,
            seq: shape.seq,
            bits,
        },
        metas,
        payload,
    };
    c.check_consistency()?;
    Ok(c)
}
