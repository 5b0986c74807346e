//! Binary checkpoints of named networks.
//!
//! Layout, little-endian: magic `FVNN`, u32 version, u32 network count; per
//! network a u32-length UTF-8 name, u32 layer count, then per layer a u8 kind
//! tag and its payload. Dense layers store u32 inputs, u32 outputs, the
//! weights row-major and the bias, all as f64. Dropout and gradient reversal
//! store their single f64 knob, as does L2 normalization (its radius); ReLU
//! has no payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::layers::{Dense, Dropout, GradientReversal, L2Normalize, Layer, Relu, Sequential};
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"FVNN";
const VERSION: u32 = 1;

const TAG_DENSE: u8 = 0;
const TAG_RELU: u8 = 1;
const TAG_DROPOUT: u8 = 2;
const TAG_REVERSAL: u8 = 3;
const TAG_NORMALIZE: u8 = 4;

pub fn encode_checkpoint<S: Scalar>(networks: &[(&str, &Sequential<S>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(networks.len() as u32).to_le_bytes());
    let f = |out: &mut Vec<u8>, v: S| out.extend_from_slice(&v.as_f64().to_le_bytes());
    for (name, net) in networks {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
        for layer in net.layers() {
            match layer {
                Layer::Dense(d) => {
                    out.push(TAG_DENSE);
                    out.extend_from_slice(&(d.inputs() as u32).to_le_bytes());
                    out.extend_from_slice(&(d.outputs() as u32).to_le_bytes());
                    for &w in d.weight().data() {
                        f(&mut out, w);
                    }
                    for &b in d.bias() {
                        f(&mut out, b);
                    }
                }
                Layer::Relu(_) => out.push(TAG_RELU),
                Layer::Dropout(d) => {
                    out.push(TAG_DROPOUT);
                    out.extend_from_slice(&d.probability().to_le_bytes());
                }
                Layer::Reversal(g) => {
                    out.push(TAG_REVERSAL);
                    f(&mut out, g.lambda());
                }
                Layer::Normalize(n) => {
                    out.push(TAG_NORMALIZE);
                    f(&mut out, n.scale());
                }
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(&self.context, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8], context: &str) -> Result<Vec<(String, Sequential<S>)>> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        context: context.to_string(),
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(context, "not a checkpoint (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(context, format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32("network count")?;
    let mut nets = Vec::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = String::from_utf8(c.take(len, "name")?.to_vec())
            .map_err(|_| Error::format(context, "network name is not UTF-8"))?;
        let layers = c.u32("layer count")?;
        let mut out = Vec::new();
        for _ in 0..layers {
            let tag = c.take(1, "layer tag")?[0];
            out.push(match tag {
                TAG_DENSE => {
                    let rows = c.u32("dense inputs")? as usize;
                    let cols = c.u32("dense outputs")? as usize;
                    let mut w = Vec::with_capacity(rows * cols);
                    for _ in 0..rows * cols {
                        w.push(S::of(c.f64("weight")?));
                    }
                    let mut b = Vec::with_capacity(cols);
                    for _ in 0..cols {
                        b.push(S::of(c.f64("bias")?));
                    }
                    Layer::Dense(Dense::from_parts(Tensor2::new(rows, cols, w)?, b)?)
                }
                TAG_RELU => Layer::Relu(Relu::new()),
                TAG_DROPOUT => Layer::Dropout(Dropout::new(c.f64("dropout probability")?)?),
                TAG_REVERSAL => Layer::Reversal(GradientReversal::new(S::of(c.f64("lambda")?))?),
                TAG_NORMALIZE => Layer::Normalize(L2Normalize::new(S::of(c.f64("normalization scale")?))?),
                other => return Err(Error::format(context, format!("unknown layer tag {other}"))),
            });
        }
        nets.push((name, Sequential::new(out)));
    }
    if c.pos != bytes.len() {
        return Err(Error::format(context, "trailing bytes after last network"));
    }
    Ok(nets)
}

/// Path of the JSON sidecar for a checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the checkpoint and its JSON sidecar describing architecture and
/// optimizer settings.
pub fn save_checkpoint<S: Scalar, M: Serialize>(
    path: &Path,
    networks: &[(&str, &Sequential<S>)],
    sidecar: &M,
) -> Result<()> {
    fs::write(path, encode_checkpoint(networks)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_vec_pretty(sidecar)
        .map_err(|e| Error::format(side.display().to_string(), e.to_string()))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Vec<(String, Sequential<S>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, Stream};

    fn net() -> Sequential<f64> {
        let mut rng = seeded(9, Stream::Init);
        Sequential::new(vec![
            Layer::Dense(Dense::glorot(3, 4, &mut rng)),
            Layer::Relu(Relu::new()),
            Layer::Dropout(Dropout::new(0.5).unwrap()),
            Layer::Reversal(GradientReversal::new(1.5).unwrap()),
            Layer::Dense(Dense::glorot(4, 2, &mut rng)),
            Layer::Normalize(L2Normalize::new(3.0).unwrap()),
        ])
    }

    #[test]
    fn round_trip_is_exact() {
        let a = net();
        let bytes = encode_checkpoint(&[("trunk", &a), ("head", &a)]);
        let back = decode_checkpoint::<f64>(&bytes, "mem").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "trunk");
        assert_eq!(back[1].1, a);
        assert_eq!(encode_checkpoint(&[("trunk", &back[0].1), ("head", &back[1].1)]), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_checkpoint(&[("x", &Sequential::<f64>::new(vec![Layer::Relu(Relu::new())]))]);
        assert_eq!(&bytes[..4], b"FVNN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes[16], b'x');
        assert_eq!(&bytes[17..21], &1u32.to_le_bytes());
        assert_eq!(bytes[21], TAG_RELU);
        assert_eq!(bytes.len(), 22);
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let bytes = encode_checkpoint(&[("n", &net())]);
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 1], "t").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint::<f64>(&extra, "t").is_err());
        assert!(decode_checkpoint::<f64>(b"NOPE", "t").is_err());
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fvnn");
        save_checkpoint(&path, &[("n", &net())], &serde_json::json!({"lr": 0.1})).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(load_checkpoint::<f64>(&path).unwrap()[0].1, net());
    }
}
