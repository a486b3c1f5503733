//! Multi-pass gating: the original input plus augmented copies go through
//! every expert and the concatenated logits of all passes are aggregated.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::logits::{ConcatenatedLogits, GatingDecision};
use super::naive::{decide_argmax, GatingReport};
use super::Mixture;
use crate::data::{Image, MixedDataset};
use crate::error::{Error, Result};

const EVAL_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    /// Unsharp mask `x + alpha * (x - box3x3(x))`.
    Sharpen { alpha: f32 },
    GaussianNoise { sigma: f32 },
    /// `Poisson(x * scale) / scale`; an infinite scale leaves the image as is.
    PoissonNoise { scale: f64 },
    Hflip,
    Vflip,
    /// Zero-pad by `pad` on every side, then crop back at a random offset.
    RandomCrop { pad: usize },
}

impl Augmentation {
    /// Poisson noise whose standard deviation at intensity 1 is `sigma`.
    pub fn poisson_sigma(sigma: f64) -> Self {
        Augmentation::PoissonNoise {
            scale: 1.0 / (sigma * sigma),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Augmentation::Sharpen { alpha } => alpha >= 0.0 && alpha.is_finite(),
            Augmentation::GaussianNoise { sigma } => sigma >= 0.0 && sigma.is_finite(),
            Augmentation::PoissonNoise { scale } => scale > 0.0,
            Augmentation::Hflip | Augmentation::Vflip | Augmentation::RandomCrop { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("augmentation parameter out of range: {self}")))
        }
    }

    /// Applies the augmentation to planar `[0, 1]` values in place and
    /// clamps the result back into `[0, 1]`.
    pub fn apply(&self, values: &mut [f32], channels: usize, height: usize, width: usize, rng: &mut impl Rng) {
        debug_assert_eq!(values.len(), channels * height * width);
        let plane = height * width;
        match *self {
            Augmentation::Sharpen { alpha } => {
                for p in values.chunks_mut(plane) {
                    let blurred = box_blur3(p, height, width);
                    for (x, b) in p.iter_mut().zip(blurred) {
                        *x += alpha * (*x - b);
                    }
                }
            }
            Augmentation::GaussianNoise { sigma } => {
                if sigma > 0.0 {
                    let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
                    for x in values.iter_mut() {
                        *x += normal.sample(rng);
                    }
                }
            }
            Augmentation::PoissonNoise { scale } => {
                if scale.is_finite() {
                    for x in values.iter_mut() {
                        let lambda = f64::from(x.max(0.0)) * scale;
                        *x = if lambda > 0.0 {
                            let d = Poisson::new(lambda).expect("positive rate");
                            (d.sample(rng) / scale) as f32
                        } else {
                            0.0
                        };
                    }
                }
            }
            Augmentation::Hflip => {
                for row in values.chunks_mut(width) {
                    row.reverse();
                }
            }
            Augmentation::Vflip => {
                for p in values.chunks_mut(plane) {
                    for y in 0..height / 2 {
                        let (top, bottom) = p.split_at_mut((height - 1 - y) * width);
                        top[y * width..(y + 1) * width].swap_with_slice(&mut bottom[..width]);
                    }
                }
            }
            Augmentation::RandomCrop { pad } => {
                let oy = rng.random_range(0..=2 * pad) as isize - pad as isize;
                let ox = rng.random_range(0..=2 * pad) as isize - pad as isize;
                let src = values.to_vec();
                for (p_out, p_in) in values.chunks_mut(plane).zip(src.chunks(plane)) {
                    for y in 0..height {
                        for x in 0..width {
                            let sy = y as isize + oy;
                            let sx = x as isize + ox;
                            p_out[y * width + x] = if (0..height as isize).contains(&sy)
                                && (0..width as isize).contains(&sx)
                            {
                                p_in[sy as usize * width + sx as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
        for x in values.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
    }
}

/// 3x3 mean over the in-bounds neighbourhood of each pixel.
fn box_blur3(p: &[f32], height: usize, width: usize) -> Vec<f32> {
    let mut out = vec![0.0; p.len()];
    for y in 0..height {
        for x in 0..width {
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..(y + 2).min(height) {
                for xx in x.saturating_sub(1)..(x + 2).min(width) {
                    sum += p[yy * width + xx];
                    n += 1.0;
                }
            }
            out[y * width + x] = sum / n;
        }
    }
    out
}

/// Augments an 8-bit image: pixels go to `[0, 1]`, get transformed, and are
/// rounded back to 8 bits so the result feeds the usual expert pipeline.
pub fn apply_augmentation(image: &Image, aug: &Augmentation, rng: &mut impl Rng) -> Image {
    let mut v = image.to_unit();
    aug.apply(&mut v, image.channels, image.height, image.width, rng);
    Image::from_unit(image.channels, image.height, image.width, &v).expect("shape preserved")
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Augmentation::Sharpen { alpha } => write!(f, "sharpen:{alpha}"),
            Augmentation::GaussianNoise { sigma } => write!(f, "gaussian:{sigma}"),
            Augmentation::PoissonNoise { scale } => write!(f, "poisson-scale:{scale}"),
            Augmentation::Hflip => f.write_str("hflip"),
            Augmentation::Vflip => f.write_str("vflip"),
            Augmentation::RandomCrop { pad } => write!(f, "crop:{pad}"),
        }
    }
}

/// Parses `name[:param]`: `sharpen:ALPHA`, `gaussian:SIGMA`, `poisson:SIGMA`,
/// `poisson-scale:SCALE`, `hflip`, `vflip`, `crop[:PAD]` (pad defaults to 4).
impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let num = |what: &str| -> Result<f64> {
            let p = param.ok_or_else(|| Error::Config(format!("augmentation '{name}' needs a {what}")))?;
            p.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad {what} '{p}' for augmentation '{name}'")))
        };
        let aug = match name {
            "sharpen" => Augmentation::Sharpen {
                alpha: num("alpha")? as f32,
            },
            "gaussian" => Augmentation::GaussianNoise {
                sigma: num("sigma")? as f32,
            },
            "poisson" => {
                let sigma = num("sigma")?;
                if sigma < 0.0 {
                    return Err(Error::Config(format!("negative sigma in '{s}'")));
                }
                Augmentation::poisson_sigma(sigma)
            }
            "poisson-scale" => Augmentation::PoissonNoise {
                scale: num("scale")?,
            },
            "hflip" => Augmentation::Hflip,
            "vflip" => Augmentation::Vflip,
            "crop" | "random-crop" => Augmentation::RandomCrop {
                pad: match param {
                    None => 4,
                    Some(p) => p
                        .parse()
                        .map_err(|_| Error::Config(format!("bad crop padding '{p}'")))?,
                },
            },
            _ => return Err(Error::Config(format!("unknown augmentation '{name}'"))),
        };
        aug.validate()?;
        Ok(aug)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Vote,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "vote" => Ok(Aggregation::Vote),
            _ => Err(Error::Config(format!("unknown aggregation '{s}' (expected mean or vote)"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "mean",
            Aggregation::Vote => "vote",
        })
    }
}

/// Combines per-pass concatenations; `passes[0]` must be the original input.
///
/// Mean averages the logits elementwise and takes the argmax. Vote takes the
/// argmax of each pass and returns the most frequent global class; when
/// several classes share the top count the original pass decides.
pub fn aggregate(passes: &[ConcatenatedLogits], agg: Aggregation) -> Result<GatingDecision> {
    let first = passes
        .first()
        .ok_or_else(|| Error::InvalidArgument("no passes to aggregate".into()))?;
    match agg {
        Aggregation::Mean => {
            let n = passes.len() as f64;
            let mut sum = vec![0.0f64; first.flat().len()];
            for p in passes {
                for (s, &v) in sum.iter_mut().zip(p.flat()) {
                    *s += f64::from(v);
                }
            }
            let mean = sum.into_iter().map(|s| (s / n) as f32).collect();
            let c = ConcatenatedLogits::with_layout(first.segments().to_vec(), mean)?;
            Ok(decide_argmax(&c))
        }
        Aggregation::Vote => {
            let decisions: Vec<GatingDecision> = passes.iter().map(decide_argmax).collect();
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for d in &decisions {
                *counts.entry(d.global_class).or_default() += 1;
            }
            let top = counts.values().copied().max().unwrap_or(0);
            let leaders: Vec<usize> = counts
                .iter()
                .filter(|(_, &c)| c == top)
                .map(|(&k, _)| k)
                .collect();
            if leaders.len() == 1 {
                Ok(*decisions
                    .iter()
                    .find(|d| d.global_class == leaders[0])
                    .expect("leader comes from a pass"))
            } else {
                Ok(decisions[0])
            }
        }
    }
}

/// Per-sample random stream: every sample draws from its own ChaCha stream,
/// so results do not depend on batching or thread count.
pub fn sample_rng(seed: u64, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    rng
}

/// The original image followed by one augmented copy per entry of `augs`.
pub fn pass_images(image: &Image, augs: &[Augmentation], rng: &mut impl Rng) -> Vec<Image> {
    let mut out = Vec::with_capacity(augs.len() + 1);
    out.push(image.clone());
    out.extend(augs.iter().map(|a| apply_augmentation(image, a, rng)));
    out
}

pub fn multi_pass_decide(
    mixture: &Mixture,
    image: &Image,
    augs: &[Augmentation],
    agg: Aggregation,
    rng: &mut impl Rng,
) -> Result<GatingDecision> {
    let images = pass_images(image, augs, rng);
    let refs: Vec<&Image> = images.iter().collect();
    let outputs = mixture.trace(&refs)?;
    let passes: Vec<ConcatenatedLogits> = (0..outputs.len()).map(|i| outputs.concat(i)).collect();
    aggregate(&passes, agg)
}

/// Mean and vote accuracies over a mixed test set; both aggregations share
/// the same augmented passes.
pub fn evaluate_augmented(
    mixture: &Mixture,
    test: &MixedDataset,
    augs: &[Augmentation],
    seed: u64,
) -> Result<(GatingReport, GatingReport)> {
    for a in augs {
        a.validate()?;
    }
    let passes = augs.len() + 1;
    let mut mean = Vec::with_capacity(test.len());
    let mut vote = Vec::with_capacity(test.len());
    for (chunk_idx, chunk) in test.images.chunks(EVAL_CHUNK).enumerate() {
        let base = chunk_idx * EVAL_CHUNK;
        let images: Vec<Image> = chunk
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, img)| pass_images(img, augs, &mut sample_rng(seed, base + i)))
            .collect();
        let refs: Vec<&Image> = images.iter().collect();
        let outputs = mixture.trace(&refs)?;
        for s in 0..chunk.len() {
            let concats: Vec<ConcatenatedLogits> =
                (s * passes..(s + 1) * passes).map(|i| outputs.concat(i)).collect();
            mean.push(aggregate(&concats, Aggregation::Mean));
            vote.push(aggregate(&concats, Aggregation::Vote));
        }
    }
    Ok((
        GatingReport::from_decisions(mean, &test.global_labels)?,
        GatingReport::from_decisions(vote, &test.global_labels)?,
    ))
}

/// Named augmentation sets matching the rows of the augmentation table.
pub fn table_presets() -> Vec<(&'static str, Vec<Augmentation>)> {
    let gauss = |s: &[f32]| -> Vec<Augmentation> {
        s.iter().map(|&sigma| Augmentation::GaussianNoise { sigma }).collect()
    };
    let poisson = |s: &[f64]| -> Vec<Augmentation> { s.iter().map(|&x| Augmentation::poisson_sigma(x)).collect() };
    let sweep = [0.05, 0.1, 0.3, 0.5, 0.7, 1.0];
    vec![
        ("Single pass sharpen", vec![Augmentation::Sharpen { alpha: 1.0 }]),
        (
            "5 pass sharpen with differing alpha (0.1, 0.3, 0.5, 0.7, 1.0)",
            [0.1, 0.3, 0.5, 0.7, 1.0]
                .iter()
                .map(|&alpha| Augmentation::Sharpen { alpha })
                .collect(),
        ),
        ("Single pass gaussian noise", gauss(&[0.1])),
        ("5 pass gaussian noise", gauss(&[0.1; 5])),
        (
            "6 pass gaussian noise with differing standard deviation (0.05, 0.1, 0.3, 0.5, 0.7, 1)",
            gauss(&sweep.map(|x| x as f32)),
        ),
        ("Single pass poisson noise", poisson(&[0.1])),
        ("5 pass poisson noise", poisson(&[0.1; 5])),
        (
            "6 pass poisson noise with differing standard deviation (0.05, 0.1, 0.3, 0.5, 0.7, 1)",
            poisson(&sweep),
        ),
        ("Horizontal and Vertical flip", vec![Augmentation::Hflip, Augmentation::Vflip]),
        ("Random cropping", vec![Augmentation::RandomCrop { pad: 4 }]),
    ]
}

#[cfg(test)]
mod tests {
    use super::super::logits::{concat, DecisionPath, ExpertLogits};
    use super::*;

    fn img() -> Image {
        Image::new(1, 4, 5, (0..20).map(|i| (i * 13) as u8).collect()).unwrap()
    }

    #[test]
    fn zero_strength_is_identity() {
        let mut rng = sample_rng(1, 0);
        for a in [
            Augmentation::Sharpen { alpha: 0.0 },
            Augmentation::GaussianNoise { sigma: 0.0 },
            Augmentation::poisson_sigma(0.0),
            Augmentation::RandomCrop { pad: 0 },
        ] {
            assert_eq!(apply_augmentation(&img(), &a, &mut rng), img(), "{a}");
        }
    }

    #[test]
    fn flips_are_involutions() {
        let mut rng = sample_rng(1, 0);
        for a in [Augmentation::Hflip, Augmentation::Vflip] {
            let once = apply_augmentation(&img(), &a, &mut rng);
            assert_ne!(once, img());
            assert_eq!(apply_augmentation(&once, &a, &mut rng), img());
        }
        let h = apply_augmentation(&img(), &Augmentation::Hflip, &mut rng);
        assert_eq!(h.pixels[0], img().pixels[4]);
        let v = apply_augmentation(&img(), &Augmentation::Vflip, &mut rng);
        assert_eq!(v.pixels[0], img().pixels[15]);
    }

    #[test]
    fn sharpen_keeps_flat_images() {
        let flat = Image::new(1, 3, 3, vec![100; 9]).unwrap();
        let out = apply_augmentation(&flat, &Augmentation::Sharpen { alpha: 0.7 }, &mut sample_rng(0, 0));
        assert_eq!(out, flat);
    }

    #[test]
    fn crop_shifts_content() {
        let mut rng = sample_rng(3, 9);
        let out = apply_augmentation(&img(), &Augmentation::RandomCrop { pad: 2 }, &mut rng);
        assert!(out.sum() <= img().sum());
    }

    #[test]
    fn noise_streams_are_per_sample() {
        let a = Augmentation::GaussianNoise { sigma: 0.2 };
        let x = apply_augmentation(&img(), &a, &mut sample_rng(5, 1));
        let y = apply_augmentation(&img(), &a, &mut sample_rng(5, 1));
        let z = apply_augmentation(&img(), &a, &mut sample_rng(5, 2));
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn parse_specs() {
        assert_eq!("gaussian:0.5".parse::<Augmentation>().unwrap(), Augmentation::GaussianNoise { sigma: 0.5 });
        assert_eq!("poisson:0.5".parse::<Augmentation>().unwrap(), Augmentation::PoissonNoise { scale: 4.0 });
        assert_eq!("crop".parse::<Augmentation>().unwrap(), Augmentation::RandomCrop { pad: 4 });
        assert!("sharpen:-1".parse::<Augmentation>().is_err());
        assert!("gaussian".parse::<Augmentation>().is_err());
        assert!("blur:1".parse::<Augmentation>().is_err());
    }

    fn cat(v: &[f32]) -> ConcatenatedLogits {
        concat(&[
            ExpertLogits {
                expert_id: 0,
                global_offset: 0,
                logits: &v[..5],
            },
            ExpertLogits {
                expert_id: 1,
                global_offset: 5,
                logits: &v[5..],
            },
        ])
        .unwrap()
    }

    fn one_hot(k: usize) -> ConcatenatedLogits {
        let mut v = [0.0f32; 10];
        v[k] = 1.0;
        cat(&v)
    }

    #[test]
    fn vote_majority_and_tie() {
        let passes = [one_hot(2), one_hot(2), one_hot(7)];
        assert_eq!(aggregate(&passes, Aggregation::Vote).unwrap().global_class, 2);
        let passes = [one_hot(7), one_hot(2), one_hot(2)];
        assert_eq!(aggregate(&passes, Aggregation::Vote).unwrap().global_class, 2);
        let tie = [one_hot(7), one_hot(2), one_hot(2), one_hot(4), one_hot(4)];
        assert_eq!(aggregate(&tie, Aggregation::Vote).unwrap().global_class, 7);
    }

    #[test]
    fn single_pass_equals_argmax() {
        let c = cat(&[0.1, 3.0, -1.0, 0.0, 2.0, 2.5, 0.0, 0.0, 0.0, 1.0]);
        for agg in [Aggregation::Mean, Aggregation::Vote] {
            assert_eq!(aggregate(std::slice::from_ref(&c), agg).unwrap(), decide_argmax(&c));
            assert_eq!(aggregate(&[c.clone(), c.clone(), c.clone()], agg).unwrap(), decide_argmax(&c));
        }
        assert_eq!(decide_argmax(&c).path, DecisionPath::Statistic);
    }
}
