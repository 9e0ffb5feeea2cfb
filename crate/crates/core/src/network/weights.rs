//! Binary weights file.
//!
//! ```text
//! "ADSM" | version: u32 | layer count: u32
//! per layer:
//!   tag: u8 (0 conv, 1 deconv, 2 batch norm, 3 relu)
//!   k, s, p, in_channels, out_channels: u32
//!   conv/deconv: weights (out, in, row, col) as f32,
//!                bias length: u32 (0 or out), bias as f32
//!   batch norm:  gamma, beta, running mean, running var (f32 each), eps: f32
//!   relu:        no payload
//! ```
//!
//! All integers and floats are little-endian. Values are stored as f32, so
//! a file written from a loaded network is byte-identical to its source.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::extractor::{FeatureExtractor, Layer};
use super::layers::{BatchNorm, ConvKind, ConvLayer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADSM";
pub const FORMAT_VERSION: u32 = 1;

const TAG_CONV: u8 = 0;
const TAG_DECONV: u8 = 1;
const TAG_BN: u8 = 2;
const TAG_RELU: u8 = 3;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_weights(net: &FeatureExtractor) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION as usize);
    put_u32(&mut buf, net.layers().len());
    let mut channels = 1;
    for layer in net.layers() {
        match layer {
            Layer::Conv(c) => {
                buf.push(match c.kind {
                    ConvKind::Conv => TAG_CONV,
                    ConvKind::Deconv => TAG_DECONV,
                });
                for v in [c.kernel, c.stride, c.padding, c.in_channels, c.out_channels] {
                    put_u32(&mut buf, v);
                }
                put_f32s(&mut buf, &c.weights);
                let bias = c.bias.as_deref().unwrap_or(&[]);
                put_u32(&mut buf, bias.len());
                put_f32s(&mut buf, bias);
                channels = c.out_channels;
            }
            Layer::BatchNorm(bn) => {
                buf.push(TAG_BN);
                for v in [0, 0, 0, bn.channels(), bn.channels()] {
                    put_u32(&mut buf, v);
                }
                put_f32s(&mut buf, &bn.gamma);
                put_f32s(&mut buf, &bn.beta);
                put_f32s(&mut buf, &bn.running_mean);
                put_f32s(&mut buf, &bn.running_var);
                put_f32s(&mut buf, &[bn.eps]);
            }
            Layer::Relu => {
                buf.push(TAG_RELU);
                for v in [0, 0, 0, channels, channels] {
                    put_u32(&mut buf, v);
                }
            }
        }
    }
    buf
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.cur
            .read_exact(&mut b)
            .map_err(|_| Error::format(self.path, "truncated weights file"))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        if (n as u64) * 4 > remaining {
            return Err(Error::format(self.path, "truncated weights file"));
        }
        (0..n)
            .map(|_| Ok(f32::from_le_bytes(self.bytes()?) as f64))
            .collect()
    }
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<FeatureExtractor> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::format(path, "missing ADSM magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut layers = Vec::new();
    for i in 0..count {
        let [tag] = r.bytes::<1>()?;
        let (k, s, p, cin, cout) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let layer = match tag {
            TAG_CONV | TAG_DECONV => {
                let kind = if tag == TAG_CONV {
                    ConvKind::Conv
                } else {
                    ConvKind::Deconv
                };
                let mut conv = ConvLayer::new(kind, k, s, p, cin, cout, false)
                    .map_err(|e| Error::format(path, format!("layer {i}: {e}")))?;
                conv.weights = r.f32s(cout * cin * k * k)?;
                let bias_len = r.u32()?;
                if bias_len != 0 && bias_len != cout {
                    return Err(Error::format(
                        path,
                        format!("layer {i}: bias length {bias_len} for {cout} channels"),
                    ));
                }
                if bias_len > 0 {
                    conv.bias = Some(r.f32s(bias_len)?);
                }
                Layer::Conv(conv)
            }
            TAG_BN => {
                if cin != cout || cin == 0 {
                    return Err(Error::format(path, format!("layer {i}: bad batch norm width")));
                }
                let mut bn = BatchNorm::new(cin);
                bn.gamma = r.f32s(cin)?;
                bn.beta = r.f32s(cin)?;
                bn.running_mean = r.f32s(cin)?;
                bn.running_var = r.f32s(cin)?;
                bn.eps = r.f32s(1)?[0];
                Layer::BatchNorm(bn)
            }
            TAG_RELU => Layer::Relu,
            other => {
                return Err(Error::format(path, format!("layer {i}: unknown tag {other}")));
            }
        };
        layers.push(layer);
    }
    if r.cur.position() as usize != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last layer"));
    }
    let patch = unit_patch_size(&layers)
        .ok_or_else(|| Error::format(path, "layer stack does not reduce any patch to 1x1"))?;
    FeatureExtractor::new(layers, patch).map_err(|e| Error::format(path, e.to_string()))
}

/// Smallest input size whose output is exactly 1, if any.
fn unit_patch_size(layers: &[Layer]) -> Option<usize> {
    let convs: Vec<&ConvLayer> = layers
        .iter()
        .filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
        .collect();
    if convs.is_empty() {
        return None;
    }
    let mut size = 1usize;
    for c in convs.iter().rev() {
        // invert O = (I - k + 2p)/s + 1 and O = s(I - 1) - 2p + k
        size = match c.kind {
            ConvKind::Conv => ((size - 1) * c.stride + c.kernel).checked_sub(2 * c.padding)?,
            ConvKind::Deconv => {
                let num = (size + 2 * c.padding).checked_sub(c.kernel)?;
                if num % c.stride != 0 {
                    return None;
                }
                num / c.stride + 1
            }
        };
        if size == 0 {
            return None;
        }
    }
    Some(size)
}

pub fn save_weights(path: impl AsRef<Path>, net: &FeatureExtractor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<FeatureExtractor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_exact_round_trip() {
        let net = FeatureExtractor::from_config_str("37-1Deconv(5)&4Conv", 8, 11).unwrap();
        let bytes = encode_weights(&net);
        assert_eq!(&bytes[..4], b"ADSM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(
            u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize,
            net.layers().len()
        );
        let loaded = decode_weights(&bytes, Path::new("mem")).unwrap();
        assert_eq!(loaded.patch_size(), 37);
        assert_eq!(encode_weights(&loaded), bytes);
        assert_eq!(loaded.geometry_chain(37).unwrap(), net.geometry_chain(37).unwrap());
    }

    #[test]
    fn first_layer_layout() {
        let net = FeatureExtractor::from_config_str("1Conv(2)", 1, 0).unwrap();
        let bytes = encode_weights(&net);
        assert_eq!(bytes[12], TAG_CONV);
        let fields: Vec<u32> = (0..5)
            .map(|i| u32::from_le_bytes(bytes[13 + 4 * i..17 + 4 * i].try_into().unwrap()))
            .collect();
        assert_eq!(fields, vec![2, 1, 0, 1, 1]);
        // 4 weights, bias length 1, one bias value
        assert_eq!(bytes.len(), 33 + 16 + 4 + 4);
    }

    #[test]
    fn corrupt_files_rejected() {
        let net = FeatureExtractor::from_config_str("2Conv(3)", 2, 0).unwrap();
        let bytes = encode_weights(&net);
        let p = Path::new("mem");
        assert!(decode_weights(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_weights(&bad, p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_weights(&extra, p).is_err());
    }
}
