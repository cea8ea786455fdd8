//! Byte-level links between pipeline stages and the message formats that
//! travel over them.
//!
//! Forward messages are `.tahq` blobs (or raw `.taht` tensors when
//! compression is disabled); backward messages are naive-quantized `.tahq`
//! blobs (or raw tensors). Receivers dispatch on the magic bytes.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::codec::{decode_blob, encode_blob, BLOB_MAGIC};
use crate::error::{Error, Result};
use crate::harness::tensor_file::{decode_tensor, encode_tensor, TENSOR_MAGIC};
use crate::quantizer::{dequantize_activation, naive_quantize, quantize_activation, QuantConfig};
use crate::tensor::ActivationTensor;

/// What is applied to tensors crossing the stage boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compression {
    /// Identity: raw 64-bit tensors on the wire.
    Passthrough,
    /// TAH-Quant forward, naive per-tile quantization backward.
    Tah {
        forward: QuantConfig,
        /// Bit width of the naive backward quantizer.
        backward_bits: u8,
    },
}

impl Compression {
    pub fn tah(forward: QuantConfig) -> Self {
        Self::Tah {
            forward,
            backward_bits: 6,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let Self::Tah {
            forward,
            backward_bits,
        } = self
        else {
            return Ok(());
        };
        let cfg = forward.validated()?;
        if channels % cfg.tile_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "tile size {} does not divide {channels} channels",
                cfg.tile_size
            )));
        }
        if !(2..=8).contains(backward_bits) {
            return Err(Error::InvalidConfig(format!(
                "backward bits must be in 2..=8, got {backward_bits}"
            )));
        }
        Ok(())
    }
}

/// An encoded message plus accounting.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    /// Mean code bits per element (64 for raw tensors).
    pub bits_mean: f64,
    pub transform_fraction: f64,
}

/// Encodes a forward activation. With `verify`, the bytes are decoded again
/// and compared against the structure that produced them.
pub fn encode_forward(act: &ActivationTensor<f64>, compression: &Compression, verify: bool) -> Result<Encoded> {
    match compression {
        Compression::Passthrough => encode_raw(act, verify),
        Compression::Tah { forward, .. } => {
            let c = quantize_activation(act, forward)?;
            let bytes = encode_blob(&c)?;
            if verify && decode_blob(&bytes)? != c {
                return Err(Error::CorruptPayload("forward blob does not decode to its source".into()));
            }
            Ok(Encoded {
                bits_mean: c.payload_bits_per_element(),
                transform_fraction: c.transform_fraction(),
                bytes,
            })
        }
    }
}

/// Encodes a backward activation gradient.
pub fn encode_backward(
    grad: &ActivationTensor<f64>,
    compression: &Compression,
    verify: bool,
) -> Result<Encoded> {
    match compression {
        Compression::Passthrough => encode_raw(grad, verify),
        Compression::Tah {
            forward,
            backward_bits,
        } => {
            let c = naive_quantize(grad, *backward_bits, forward.tile_size)?;
            let bytes = encode_blob(&c)?;
            if verify && decode_blob(&bytes)? != c {
                return Err(Error::CorruptPayload("backward blob does not decode to its source".into()));
            }
            Ok(Encoded {
                bits_mean: c.payload_bits_per_element(),
                transform_fraction: 0.0,
                bytes,
            })
        }
    }
}

fn encode_raw(t: &ActivationTensor<f64>, verify: bool) -> Result<Encoded> {
    let bytes = encode_tensor(t)?;
    if verify {
        let back: ActivationTensor<f64> = decode_tensor(&bytes)?;
        let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::CorruptPayload("raw tensor does not decode to its source".into()));
        }
    }
    Ok(Encoded {
        bytes,
        bits_mean: 64.0,
        transform_fraction: 0.0,
    })
}

/// Decodes either message kind back into a dense tensor.
pub fn decode_message(bytes: &[u8]) -> Result<ActivationTensor<f64>> {
    if bytes.len() >= 4 && &bytes[..4] == BLOB_MAGIC {
        dequantize_activation(&decode_blob(bytes)?)
    } else if bytes.len() >= 4 && &bytes[..4] == TENSOR_MAGIC {
        decode_tensor(bytes)
    } else {
        Err(Error::Format("message is neither a TAHQ blob nor a TAHT tensor".into()))
    }
}

/// One end of an ordered, lossless, bidirectional byte link.
pub enum Endpoint {
    Queue {
        tx: Sender<Vec<u8>>,
        rx: Receiver<Vec<u8>>,
    },
    /// Length-prefixed frames (u64 little-endian) over a loopback socket.
    Tcp(TcpStream),
}

impl Endpoint {
    /// Two connected in-process endpoints.
    pub fn queue_pair() -> (Self, Self) {
        let (tx_ab, rx_ab) = channel();
        let (tx_ba, rx_ba) = channel();
        (
            Self::Queue { tx: tx_ab, rx: rx_ba },
            Self::Queue { tx: tx_ba, rx: rx_ab },
        )
    }

    /// Two endpoints connected through a TCP socket on 127.0.0.1.
    pub fn loopback_pair() -> Result<(Self, Self)> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let client = TcpStream::connect(addr)?;
        let (server, _) = listener.accept()?;
        client.set_nodelay(true)?;
        server.set_nodelay(true)?;
        Ok((Self::Tcp(client), Self::Tcp(server)))
    }

    pub fn send(&mut self, bytes: Vec<u8>) -> Result<()> {
        match self {
            Self::Queue { tx, .. } => tx
                .send(bytes)
                .map_err(|_| Error::Channel("peer hung up".into())),
            Self::Tcp(stream) => {
                stream.write_all(&(bytes.len() as u64).to_le_bytes())?;
                stream.write_all(&bytes)?;
                stream.flush()?;
                Ok(())
            }
        }
    }

    pub fn recv(&mut self) -> Result<Vec<u8>> {
        match self {
            Self::Queue { rx, .. } => rx.recv().map_err(|_| Error::Channel("peer hung up".into())),
            Self::Tcp(stream) => {
                let mut len = [0u8; 8];
                stream
                    .read_exact(&mut len)
                    .map_err(|e| Error::Channel(format!("reading frame length: {e}")))?;
                let mut buf = vec![0u8; u64::from_le_bytes(len) as usize];
                stream
                    .read_exact(&mut buf)
                    .map_err(|e| Error::Channel(format!("reading frame body: {e}")))?;
                Ok(buf)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn sample() -> ActivationTensor<f64> {
        ActivationTensor::from_fn(Shape::new(2, 2, 32), |b, s, c| ((b + 3 * s + 7 * c) as f64).cos()).unwrap()
    }

    #[test]
    fn passthrough_is_exact() {
        let t = sample();
        let msg = encode_forward(&t, &Compression::Passthrough, true).unwrap();
        assert_eq!(decode_message(&msg.bytes).unwrap(), t);
        assert_eq!(msg.bits_mean, 64.0);
    }

    #[test]
    fn tah_messages_decode() {
        let t = sample();
        let comp = Compression::tah(QuantConfig::default());
        let fw = encode_forward(&t, &comp, true).unwrap();
        assert_eq!(&fw.bytes[..4], b"TAHQ");
        assert!(t.relative_l2_error(&decode_message(&fw.bytes).unwrap()).unwrap() < 0.2);
        let bw = encode_backward(&t, &comp, true).unwrap();
        assert_eq!(bw.bits_mean, 6.0);
        assert!(t.relative_l2_error(&decode_message(&bw.bytes).unwrap()).unwrap() < 0.05);
    }

    #[test]
    fn rejects_unknown_messages() {
        assert!(decode_message(b"nope").is_err());
    }

    #[test]
    fn links_preserve_order() {
        let pairs = [Endpoint::queue_pair(), Endpoint::loopback_pair().unwrap()];
        for (mut a, mut b) in pairs {
            a.send(vec![1, 2, 3]).unwrap();
            a.send(vec![]).unwrap();
            b.send(vec![9]).unwrap();
            assert_eq!(b.recv().unwrap(), vec![1, 2, 3]);
            assert_eq!(b.recv().unwrap(), Vec::<u8>::new());
            assert_eq!(a.recv().unwrap(), vec![9]);
        }
    }

    #[test]
    fn validates_backward_bits() {
        let comp = Compression::Tah {
            forward: QuantConfig::default(),
            backward_bits: 9,
        };
        assert!(comp.validate(64).is_err());
        assert!(Compression::tah(QuantConfig::default()).validate(48).is_err());
        assert!(Compression::tah(QuantConfig::default()).validate(64).is_ok());
    }
}
