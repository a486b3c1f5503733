use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::{ChannelStats, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled 8-bit images of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub name: String,
    pub class_count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pixels: Vec<u8>,
    labels: Vec<usize>,
}

impl ImageDataset {
    pub fn new(
        name: impl Into<String>,
        class_count: usize,
        (channels, height, width): (usize, usize, usize),
        pixels: Vec<u8>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        if !matches!(channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "{name}: images have 1 or 3 channels, got {channels}"
            )));
        }
        if class_count == 0 {
            return Err(Error::InvalidArgument(format!("{name}: zero classes")));
        }
        let item = channels * height * width;
        if pixels.len() != labels.len() * item {
            return Err(Error::shape(
                format!("{name} pixel buffer"),
                &[labels.len() * item],
                &[pixels.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "{name}: label {bad} outside {class_count} classes"
            )));
        }
        Ok(ImageDataset {
            name,
            class_count,
            channels,
            height,
            width,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Image {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: self.pixels(i).to_vec(),
        }
    }

    pub fn images(&self) -> impl Iterator<Item = Image> + '_ {
        (0..self.len()).map(|i| self.image(i))
    }

    /// Label histogram of length `class_count`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.pixels.truncate(n * self.image_len());
        }
    }

    /// Keeps only samples whose label is in `classes`, relabelled to the
    /// position of that label within `classes`.
    pub fn split_by_class(&self, classes: &[usize]) -> Result<ImageDataset> {
        if classes.is_empty() {
            return Err(Error::InvalidArgument("class list is empty".into()));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= self.class_count) {
            return Err(Error::InvalidArgument(format!(
                "{}: class {bad} outside {} classes",
                self.name, self.class_count
            )));
        }
        let mut remap = vec![None; self.class_count];
        for (new, &old) in classes.iter().enumerate() {
            if remap[old].is_some() {
                return Err(Error::InvalidArgument(format!("class {old} listed twice")));
            }
            remap[old] = Some(new);
        }
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if let Some(new) = remap[l] {
                pixels.extend_from_slice(self.pixels(i));
                labels.push(new);
            }
        }
        ImageDataset::new(
            format!("{}:{}", self.name, ClassList(classes.to_vec())),
            classes.len(),
            (self.channels, self.height, self.width),
            pixels,
            labels,
        )
    }

    /// Per-channel mean and standard deviation of `x / 255`.
    pub fn channel_stats(&self) -> ChannelStats {
        let plane = self.height * self.width;
        let mut sum = vec![0.0f64; self.channels];
        let mut sq = vec![0.0f64; self.channels];
        for i in 0..self.len() {
            let px = self.pixels(i);
            for c in 0..self.channels {
                for &p in &px[c * plane..(c + 1) * plane] {
                    let v = f64::from(p) / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (self.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0).sqrt()).max(1e-3) as f32)
            .collect();
        ChannelStats {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    /// Real-valued `[N, C, H, W]` tensor of `(x / 255 - mean) / std`.
    pub fn normalize(&self, stats: &ChannelStats) -> Result<Tensor> {
        stats.validate()?;
        if stats.channels() != self.channels {
            return Err(Error::shape(
                "normalization channels",
                &[self.channels],
                &[stats.channels()],
            ));
        }
        let item = self.image_len();
        let mut data = vec![0.0f32; self.len() * item];
        for (i, out) in data.chunks_mut(item.max(1)).enumerate().take(self.len()) {
            stats.apply_into(&self.image(i), out);
        }
        Tensor::new(vec![self.len(), self.channels, self.height, self.width], data)
    }
}

/// Ordered list of source class indices, written `0-4` or `1+3+5`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassList(pub Vec<usize>);

impl fmt::Display for ClassList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = &self.0;
        let contiguous = v.len() > 1 && v.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous {
            write!(f, "{}-{}", v[0], v[v.len() - 1])
        } else {
            let parts: Vec<String> = v.iter().map(usize::to_string).collect();
            write!(f, "{}", parts.join("+"))
        }
    }
}

impl FromStr for ClassList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad class list '{s}'"));
        let mut out = Vec::new();
        for part in s.split(['+', ';']) {
            let part = part.trim();
            if let Some((a, b)) = part.split_once('-') {
                let (a, b): (usize, usize) = (
                    a.trim().parse().map_err(|_| bad())?,
                    b.trim().parse().map_err(|_| bad())?,
                );
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            } else {
                out.push(part.parse().map_err(|_| bad())?);
            }
        }
        if out.is_empty() {
            return Err(bad());
        }
        Ok(ClassList(out))
    }
}

/// A dataset tag with an optional class subset, e.g. `mnist:5-9`.
/// Serialized as that string.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DatasetRef {
    pub tag: String,
    pub classes: Option<ClassList>,
}

impl DatasetRef {
    pub fn full(tag: impl Into<String>) -> Self {
        DatasetRef {
            tag: tag.into(),
            classes: None,
        }
    }

    pub fn subset(tag: impl Into<String>, classes: Vec<usize>) -> Self {
        DatasetRef {
            tag: tag.into(),
            classes: Some(ClassList(classes)),
        }
    }

    /// File-name friendly identifier.
    pub fn slug(&self) -> String {
        match &self.classes {
            None => self.tag.clone(),
            Some(c) => format!("{}_{}", self.tag, c.to_string().replace('+', "_")),
        }
    }
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.classes {
            None => write!(f, "{}", self.tag),
            Some(c) => write!(f, "{}:{}", self.tag, c),
        }
    }
}

impl TryFrom<String> for DatasetRef {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DatasetRef> for String {
    fn from(r: DatasetRef) -> String {
        r.to_string()
    }
}

impl FromStr for DatasetRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.split_once(':') {
            Some((tag, classes)) if !tag.is_empty() => Ok(DatasetRef {
                tag: tag.to_string(),
                classes: Some(classes.parse()?),
            }),
            None if !s.is_empty() => Ok(DatasetRef::full(s)),
            _ => Err(Error::Config(format!("bad dataset reference '{s}'"))),
        }
    }
}
