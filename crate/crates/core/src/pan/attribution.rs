//! Feature rows labelled with whether they came from an expert's own data.
//!
//! On disk: 8-byte magic `MOEGATTR`, little-endian `u32` version, `u32`
//! header length, JSON header, then `rows * width` little-endian `f32`
//! features and `rows` label bytes (0 or 1).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureKind;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MOEGATTR";
pub const VERSION: u32 = 1;

/// A contiguous block of rows produced by one expert tracing one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub expert_id: usize,
    pub positive: bool,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionDataset {
    pub kind: FeatureKind,
    width: usize,
    features: Vec<f32>,
    labels: Vec<bool>,
    groups: Vec<Provenance>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: FeatureKind,
    width: usize,
    rows: usize,
    groups: Vec<Provenance>,
}

impl AttributionDataset {
    pub fn new(kind: FeatureKind, width: usize) -> Self {
        AttributionDataset {
            kind,
            width,
            features: Vec::new(),
            labels: Vec::new(),
            groups: Vec::new(),
        }
    }

    /// Appends `features` (row-major, `width` wide) as one provenance group.
    pub fn push_group(
        &mut self,
        source: impl Into<String>,
        expert_id: usize,
        positive: bool,
        features: &[f32],
    ) -> Result<()> {
        if self.width == 0 || !features.len().is_multiple_of(self.width) {
            return Err(Error::IncompatibleFeatures(format!(
                "{} values do not form rows of width {}",
                features.len(),
                self.width
            )));
        }
        let rows = features.len() / self.width;
        self.groups.push(Provenance {
            source: source.into(),
            expert_id,
            positive,
            start: self.labels.len(),
            len: rows,
        });
        self.features.extend_from_slice(features);
        self.labels.extend(std::iter::repeat_n(positive, rows));
        Ok(())
    }

    /// Appends all rows of `other`, which must share kind and width.
    pub fn merge(&mut self, other: &AttributionDataset) -> Result<()> {
        if other.kind != self.kind || other.width != self.width {
            return Err(Error::IncompatibleFeatures(format!(
                "cannot merge {:?} rows of width {} into {:?} rows of width {}",
                other.kind, other.width, self.kind, self.width
            )));
        }
        for g in &other.groups {
            let rows = &other.features[g.start * self.width..(g.start + g.len) * self.width];
            self.push_group(g.source.clone(), g.expert_id, g.positive, rows)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn groups(&self) -> &[Provenance] {
        &self.groups
    }

    /// `(false count, true count)`.
    pub fn label_counts(&self) -> (usize, usize) {
        let t = self.labels.iter().filter(|&&l| l).count();
        (self.labels.len() - t, t)
    }

    /// Accuracy of always answering the more common label.
    pub fn majority_baseline(&self) -> f64 {
        let (f, t) = self.label_counts();
        f.max(t) as f64 / self.len().max(1) as f64
    }

    /// Copy with labels permuted at random (a chance-level control).
    pub fn with_shuffled_labels(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            kind: self.kind,
            width: self.width,
            rows: self.len(),
            groups: self.groups.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + self.features.len() * 4 + self.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.labels.iter().map(|&l| u8::from(l)));
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |m: String| Error::format(path, m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(err("not an attribution dataset (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(err(format!(
                "attribution dataset version {version}, this build reads version {VERSION}"
            )));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let hdr_end = 16 + hlen;
        if bytes.len() < hdr_end {
            return Err(err(format!("truncated header: need {hlen} bytes at offset 16")));
        }
        let h: Header = serde_json::from_slice(&bytes[16..hdr_end])?;
        let nfeat = h.rows * h.width;
        let expected = hdr_end + nfeat * 4 + h.rows;
        if bytes.len() != expected {
            return Err(err(format!(
                "expected {expected} bytes for {} rows of width {}, found {}",
                h.rows,
                h.width,
                bytes.len()
            )));
        }
        let features: Vec<f32> = bytes[hdr_end..hdr_end + nfeat * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut labels = Vec::with_capacity(h.rows);
        for (i, &b) in bytes[hdr_end + nfeat * 4..].iter().enumerate() {
            match b {
                0 => labels.push(false),
                1 => labels.push(true),
                _ => return Err(err(format!("label byte {b} at row {i} is not 0 or 1"))),
            }
        }
        let mut covered = 0;
        for g in &h.groups {
            if g.start != covered || labels[g.start..g.start + g.len].iter().any(|&l| l != g.positive) {
                return Err(err("provenance groups disagree with rows".into()));
            }
            covered += g.len;
        }
        if covered != h.rows {
            return Err(err("provenance groups do not cover every row".into()));
        }
        Ok(AttributionDataset {
            kind: h.kind,
            width: h.width,
            features,
            labels,
            groups: h.groups,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AttributionDataset {
        let mut ds = AttributionDataset::new(FeatureKind::OutputStats, 3);
        ds.push_group("a", 0, true, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        ds.push_group("b", 0, false, &[-1.0, 0.5, 9.0]).unwrap();
        ds
    }

    #[test]
    fn groups_and_counts() {
        let ds = sample();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.label_counts(), (1, 2));
        assert_eq!(ds.row(2), &[-1.0, 0.5, 9.0]);
        assert_eq!(ds.groups()[1].start, 2);
    }

    #[test]
    fn ragged_rows_rejected() {
        let mut ds = AttributionDataset::new(FeatureKind::OutputLogits, 5);
        assert!(ds.push_group("x", 0, true, &[1.0; 7]).is_err());
    }

    #[test]
    fn merge_checks_width() {
        let mut ds = sample();
        ds.merge(&sample()).unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.groups().len(), 4);
        let other = AttributionDataset::new(FeatureKind::OutputStats, 4);
        assert!(matches!(ds.merge(&other), Err(Error::IncompatibleFeatures(_))));
    }

    #[test]
    fn file_round_trip() {
        let ds = sample();
        let bytes = ds.encode().unwrap();
        assert_eq!(AttributionDataset::decode(&bytes, Path::new("m")).unwrap(), ds);
        let mut bad = bytes.clone();
        bad[8] = 9;
        let e = AttributionDataset::decode(&bad, Path::new("m")).unwrap_err();
        assert!(e.to_string().contains("version 9"), "{e}");
        assert!(AttributionDataset::decode(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
    }
}
