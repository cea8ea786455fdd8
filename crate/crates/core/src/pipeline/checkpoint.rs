//! Model checkpoints: `"TAHM" | version u8 | nonlinearity u8 | B u32 | S u32
//! | count u32`, then `count` length-prefixed (u64) `.taht` tensors holding
//! `W₁`, `b₁`, the channel gains, `W₂` and `b₂` at 64-bit precision.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::tensor_file::{decode_tensor, encode_tensor};
use crate::pipeline::model::{ModelDims, Nonlinearity, PipelineModel, StageA, StageB};
use crate::tensor::{ActivationTensor, Shape};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TAHM";
pub const CHECKPOINT_VERSION: u8 = 1;

fn matrix(rows: usize, cols: usize, values: &[f64]) -> Result<Vec<u8>> {
    encode_tensor(&ActivationTensor::new(Shape::new(1, rows, cols), values.to_vec())?)
}

pub fn encode_checkpoint(model: &PipelineModel) -> Result<Vec<u8>> {
    let d = model.dims;
    let a = &model.stage_a;
    let b = &model.stage_b;
    let tensors = [
        matrix(d.d_in, d.channels, a.weights())?,
        matrix(1, d.channels, a.bias())?,
        matrix(1, d.channels, &a.channel_scale)?,
        matrix(d.channels, d.d_out, b.weights())?,
        matrix(1, d.d_out, b.bias())?,
    ];
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.push(match a.nonlinearity {
        Nonlinearity::Tanh => 0,
        Nonlinearity::Identity => 1,
    });
    out.extend_from_slice(&(d.batch as u32).to_le_bytes());
    out.extend_from_slice(&(d.seq as u32).to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        out.extend_from_slice(t);
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = *pos + n;
    if end > bytes.len() {
        return Err(Error::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PipelineModel> {
    let mut pos = 0;
    if take(bytes, &mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, expected TAHM".into()));
    }
    let version = take(bytes, &mut pos, 1)?[0];
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let nonlinearity = match take(bytes, &mut pos, 1)?[0] {
        0 => Nonlinearity::Tanh,
        1 => Nonlinearity::Identity,
        other => return Err(Error::Format(format!("unknown nonlinearity {other}"))),
    };
    let mut u32_field = || -> Result<usize> {
        Ok(u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize)
    };
    let batch = u32_field()?;
    let seq = u32_field()?;
    let count = u32_field()?;
    if count != 5 {
        return Err(Error::Format(format!("expected 5 tensors, found {count}")));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap()) as usize;
        tensors.push(decode_tensor::<f64>(take(bytes, &mut pos, len)?)?);
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - pos)));
    }

    let w1 = tensors[0].shape();
    let (d_in, channels) = (w1.seq, w1.channels);
    let d_out = tensors[3].shape().channels;
    let dims = ModelDims {
        batch,
        seq,
        d_in,
        channels,
        d_out,
    };
    dims.validate()?;
    let expect = [(d_in, channels), (1, channels), (1, channels), (channels, d_out), (1, d_out)];
    for (t, &(rows, cols)) in tensors.iter().zip(&expect) {
        let s = t.shape();
        if (s.batch, s.seq, s.channels) != (1, rows, cols) {
            return Err(Error::Format(format!("tensor shape {s} does not match 1x{rows}x{cols}")));
        }
    }

    let mut a_params = tensors[0].data().to_vec();
    a_params.extend_from_slice(tensors[1].data());
    let mut b_params = tensors[3].data().to_vec();
    b_params.extend_from_slice(tensors[4].data());
    Ok(PipelineModel {
        dims,
        stage_a: StageA {
            d_in,
            channels,
            params: a_params,
            channel_scale: tensors[2].data().to_vec(),
            nonlinearity,
        },
        stage_b: StageB {
            channels,
            d_out,
            params: b_params,
        },
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &PipelineModel) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PipelineModel> {
    decode_checkpoint(&fs::read(path)?)
}
