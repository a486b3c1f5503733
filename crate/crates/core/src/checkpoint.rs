//! Binary container shared by expert, PAN and FPAN checkpoints:
//! 8-byte magic, little-endian `u32` version, `u32` header length, a JSON
//! header, a `u32` blob count, then each blob as a `u64` value count
//! followed by little-endian `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"MOEGCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub header: serde_json::Value,
    pub blobs: Vec<Vec<f32>>,
}

pub fn encode(header: &serde_json::Value, blobs: &[&[f32]]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let values: usize = blobs.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(24 + header.len() + blobs.len() * 8 + values * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(blobs.len() as u32).to_le_bytes());
    for b in blobs {
        out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        for v in *b {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.path,
                format!(
                    "truncated checkpoint: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos.min(self.bytes.len())
                ),
            )),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<RawCheckpoint> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if cur.take(8)? != MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("checkpoint version {version}, this build reads version {VERSION}"),
        ));
    }
    let hlen = cur.u32()? as usize;
    let header = serde_json::from_slice(cur.take(hlen)?)?;
    let count = cur.u32()? as usize;
    let mut blobs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let n = cur.u64()? as usize;
        let raw = cur.take(n.checked_mul(4).ok_or_else(|| {
            Error::format(path, "blob length overflows")
        })?)?;
        blobs.push(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        );
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            format!("{} trailing bytes after last blob", bytes.len() - cur.pos),
        ));
    }
    Ok(RawCheckpoint { header, blobs })
}

pub fn write(path: &Path, header: &serde_json::Value, blobs: &[&[f32]]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(header, blobs)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<RawCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Layer chain description stored in checkpoint headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn of(network: &Network) -> Self {
        Architecture {
            input_shape: network.input_shape().to_vec(),
            layers: network.specs(),
        }
    }
}

/// Weight and bias blobs of every parameterized layer, in order.
pub fn network_blobs(network: &Network) -> Vec<&[f32]> {
    network
        .layers()
        .iter()
        .filter(|l| !l.weight.is_empty())
        .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
        .collect()
}

/// Rebuilds a network, consuming its blobs from the front of `blobs`.
pub fn network_from_blobs(
    arch: &Architecture,
    blobs: &mut impl Iterator<Item = Vec<f32>>,
    path: &Path,
) -> Result<Network> {
    let mut net = Network::new(&arch.input_shape, &arch.layers)?;
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        if layer.weight.is_empty() {
            continue;
        }
        for (what, slot) in [("weight", &mut layer.weight), ("bias", &mut layer.bias)] {
            let blob = blobs.next().ok_or_else(|| {
                Error::format(path, format!("missing {what} blob for layer {i}"))
            })?;
            if blob.len() != slot.len() {
                return Err(Error::format(
                    path,
                    format!(
                        "layer {i} {what} blob has {} values, architecture needs {}",
                        blob.len(),
                        slot.len()
                    ),
                ));
            }
            if blob.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(path, format!("layer {i} {what} is not finite")));
            }
            *slot = blob;
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let h = serde_json::json!({"kind": "x", "n": 3});
        let bytes = encode(&h, &[&[1.0, -2.5], &[], &[f32::MIN_POSITIVE]]).unwrap();
        let raw = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(raw.header, h);
        assert_eq!(raw.blobs, vec![vec![1.0, -2.5], vec![], vec![f32::MIN_POSITIVE]]);
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut bytes = encode(&serde_json::json!({}), &[]).unwrap();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = decode(&bytes, Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("version 7") && err.contains("version 1"), "{err}");
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode(&serde_json::json!({}), &[&[1.0, 2.0]]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
        assert!(decode(b"MOEG", Path::new("mem")).is_err());
    }
}
