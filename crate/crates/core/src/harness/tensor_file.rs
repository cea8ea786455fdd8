//! `.taht` tensor files: `"TAHT" | version u8 | dtype u8 | B u32 | S u32 | C u32`
//! followed by the raw little-endian values in row-major order. dtype 0 is
//! 32-bit, dtype 1 is 64-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ActivationTensor, Real, Shape};

pub const TENSOR_MAGIC: &[u8; 4] = b"TAHT";
pub const TENSOR_VERSION: u8 = 1;
pub const TENSOR_HEADER_LEN: usize = 18;

pub fn encode_tensor<T: Real>(t: &ActivationTensor<T>) -> Result<Vec<u8>> {
    let shape = t.shape();
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + T::BYTES * shape.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(T::DTYPE);
    for (name, d) in [("B", shape.batch), ("S", shape.seq), ("C", shape.channels)] {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidInput(format!("{name}={d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

fn read_values<S: Real, T: Real>(body: &[u8]) -> Vec<T> {
    body.chunks_exact(S::BYTES)
        .map(|b| T::from_f64(S::read_le(b).as_f64()))
        .collect()
}

/// Decodes a tensor file into element type `T`, converting from the stored
/// dtype when it differs.
pub fn decode_tensor<T: Real>(bytes: &[u8]) -> Result<ActivationTensor<T>> {
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(Error::Truncated {
            needed: TENSOR_HEADER_LEN,
            available: bytes.len(),
        });
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format("bad magic, expected TAHT".into()));
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(Error::Version {
            found: bytes[4],
            expected: TENSOR_VERSION,
        });
    }
    let dtype = bytes[5];
    let width = match dtype {
        0 => 4,
        1 => 8,
        other => return Err(Error::Format(format!("unknown dtype {other}"))),
    };
    let dim = |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2));
    shape.validate().map_err(|e| Error::Format(e.to_string()))?;
    let needed = shape
        .numel()
        .checked_mul(width)
        .and_then(|n| n.checked_add(TENSOR_HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("shape {shape} overflows")))?;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let body = &bytes[TENSOR_HEADER_LEN..];
    let data = match dtype {
        0 => read_values::<f32, T>(body),
        _ => read_values::<f64, T>(body),
    };
    ActivationTensor::new(shape, data)
}

pub fn save_tensor<T: Real>(path: impl AsRef<Path>, t: &ActivationTensor<T>) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn load_tensor<T: Real>(path: impl AsRef<Path>) -> Result<ActivationTensor<T>> {
    decode_tensor(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = ActivationTensor::<f32>::new(Shape::new(1, 2, 3), vec![1.5; 6]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(bytes.len(), TENSOR_HEADER_LEN + 4 * 6);
        assert_eq!(&bytes[..6], b"TAHT\x01\x00");
        assert_eq!(&bytes[6..18], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[18..22], &1.5f32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_files() {
        let t = ActivationTensor::<f32>::new(Shape::new(1, 1, 2), vec![1.0, 2.0]).unwrap();
        let bytes = encode_tensor(&t).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor::<f32>(&bad), Err(Error::Format(_))));
        assert!(matches!(decode_tensor::<f32>(&bytes[..20]), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[5] = 9;
        assert!(matches!(decode_tensor::<f32>(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.taht");
        let t = ActivationTensor::<f64>::new(Shape::new(2, 1, 2), vec![0.1, -0.2, 1e300, -0.0]).unwrap();
        save_tensor(&path, &t).unwrap();
        assert_eq!(load_tensor::<f64>(&path).unwrap(), t);
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(b in 1usize..4, s in 1usize..4, c in 1usize..9, seed in any::<u64>()) {
            let t = ActivationTensor::<f32>::from_fn(Shape::new(b, s, c), |i, j, k| {
                f32::from_bits((seed as u32).wrapping_mul(2654435761).wrapping_add((i * 97 + j * 13 + k) as u32) & 0x7f7f_ffff)
            }).unwrap();
            let back: ActivationTensor<f32> = decode_tensor(&encode_tensor(&t).unwrap()).unwrap();
            let same = t.data().iter().zip(back.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            prop_assert!(same);
        }
    }
}
