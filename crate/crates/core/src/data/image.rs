use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One 8-bit image stored plane by plane (channel, row, column).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::shape(
                "image pixels",
                &[channels, height, width],
                &[pixels.len()],
            ));
        }
        Ok(Image {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn sum(&self) -> u64 {
        self.pixels.iter().map(|&p| u64::from(p)).sum()
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| f32::from(p) / 255.0).collect()
    }

    /// Inverse of [`to_unit`](Self::to_unit): clamps to `[0, 1]` and rounds
    /// to the nearest 8-bit level.
    pub fn from_unit(channels: usize, height: usize, width: usize, values: &[f32]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Image::new(channels, height, width, pixels)
    }
}

/// ITU-R 601 luminance of an 8-bit RGB triple, rounded half up.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let v = 299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b);
    ((v + 500) / 1000) as u8
}

/// Converts between grayscale and RGB: 1 -> 3 replicates the plane,
/// 3 -> 1 takes the luminance.
pub fn adapt_channels(image: &Image, target_channels: usize) -> Result<Image> {
    match (image.channels, target_channels) {
        (a, b) if a == b => Ok(image.clone()),
        (1, 3) => {
            let mut pixels = Vec::with_capacity(image.pixels.len() * 3);
            for _ in 0..3 {
                pixels.extend_from_slice(&image.pixels);
            }
            Image::new(3, image.height, image.width, pixels)
        }
        (3, 1) => {
            let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
            let pixels = r
                .iter()
                .zip(g)
                .zip(b)
                .map(|((&r, &g), &b)| luminance(r, g, b))
                .collect();
            Image::new(1, image.height, image.width, pixels)
        }
        (_, t) => Err(Error::InvalidArgument(format!(
            "target channel count must be 1 or 3, got {t}"
        ))),
    }
}

/// Zero-pads to `height x width`, centering the original.
pub fn pad_to(image: &Image, height: usize, width: usize) -> Result<Image> {
    if height < image.height || width < image.width {
        return Err(Error::InvalidArgument(format!(
            "cannot pad {}x{} image to smaller {height}x{width}",
            image.height, image.width
        )));
    }
    if height == image.height && width == image.width {
        return Ok(image.clone());
    }
    let top = (height - image.height) / 2;
    let left = (width - image.width) / 2;
    let mut pixels = vec![0u8; image.channels * height * width];
    for c in 0..image.channels {
        let src = image.plane(c);
        for r in 0..image.height {
            let dst = c * height * width + (top + r) * width + left;
            pixels[dst..dst + image.width]
                .copy_from_slice(&src[r * image.width..(r + 1) * image.width]);
        }
    }
    Image::new(image.channels, height, width, pixels)
}

/// Per-channel standardization constants applied to `x / 255`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() || self.mean.is_empty() {
            return Err(Error::InvalidArgument(
                "channel statistics need one mean and one std per channel".into(),
            ));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "standard deviations must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }

    /// Writes `(x / 255 - mean) / std` for one image into `out`.
    pub fn apply_into(&self, image: &Image, out: &mut [f32]) {
        let n = image.height * image.width;
        for c in 0..image.channels {
            let (m, s) = (self.mean[c], self.std[c]);
            for (o, &p) in out[c * n..(c + 1) * n].iter_mut().zip(image.plane(c)) {
                *o = (f32::from(p) / 255.0 - m) / s;
            }
        }
    }
}

pub(crate) fn stack_normalized(images: &[Image], stats: &ChannelStats) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let item = c * h * w;
    let mut data = vec![0.0f32; images.len() * item];
    for (img, out) in images.iter().zip(data.chunks_mut(item)) {
        if (img.channels, img.height, img.width) != (c, h, w) {
            return Err(Error::shape(
                "image batch",
                &[c, h, w],
                &[img.channels, img.height, img.width],
            ));
        }
        stats.apply_into(img, out);
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(p: Vec<u8>, h: usize, w: usize) -> Image {
        Image::new(1, h, w, p).unwrap()
    }

    #[test]
    fn gray_to_rgb_replicates() {
        let rgb = adapt_channels(&gray(vec![7], 1, 1), 3).unwrap();
        assert_eq!(rgb.pixels, vec![7, 7, 7]);
    }

    #[test]
    fn luminance_cases() {
        let img = |r, g, b| Image::new(3, 1, 1, vec![r, g, b]).unwrap();
        assert_eq!(adapt_channels(&img(100, 100, 100), 1).unwrap().pixels, vec![100]);
        // 0.299 * 255 = 76.245
        assert_eq!(adapt_channels(&img(255, 0, 0), 1).unwrap().pixels, vec![76]);
        assert!(adapt_channels(&img(1, 2, 3), 2).is_err());
    }

    #[test]
    fn mnist_to_cifar_padding() {
        let img = gray((0..28 * 28).map(|v| (v % 251) as u8).collect(), 28, 28);
        let padded = pad_to(&img, 32, 32).unwrap();
        assert_eq!(padded.sum(), img.sum());
        // two rows of zeros on top, two columns on the left
        assert!(padded.pixels[..2 * 32].iter().all(|&p| p == 0));
        assert_eq!(padded.pixels[2 * 32 + 2], img.pixels[0]);
        assert_eq!(padded.pixels[2 * 32 + 1], 0);
        assert_eq!(padded.pixels[29 * 32 + 29], img.pixels[27 * 28 + 27]);
        assert!(pad_to(&padded, 28, 28).is_err());
    }

    #[test]
    fn unit_stats_scale_only() {
        let img = gray(vec![0, 51, 255], 1, 3);
        let mut out = [0.0; 3];
        ChannelStats::identity(1).apply_into(&img, &mut out);
        assert_eq!(out, [0.0, 51.0 / 255.0, 1.0]);
    }
}
