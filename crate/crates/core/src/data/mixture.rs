use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetRef, ImageDataset};
use super::image::Image;
use crate::error::{Error, Result};

/// One expert slot of a mixture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub dataset: DatasetRef,
    pub expert_id: usize,
    /// First global label owned by this expert.
    pub offset: usize,
    pub class_count: usize,
}

impl MixtureEntry {
    pub fn global_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.class_count
    }
}

/// Ordered experts of a mixture and their global label layout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub entries: Vec<MixtureEntry>,
}

impl MixtureSpec {
    /// Lays experts out in order: expert `i` owns the labels right after
    /// expert `i - 1`.
    pub fn contiguous(datasets: &[(DatasetRef, usize)]) -> Result<Self> {
        let mut offset = 0;
        let entries = datasets
            .iter()
            .enumerate()
            .map(|(expert_id, (dataset, class_count))| {
                let e = MixtureEntry {
                    dataset: dataset.clone(),
                    expert_id,
                    offset,
                    class_count: *class_count,
                };
                offset += class_count;
                e
            })
            .collect();
        let spec = MixtureSpec { entries };
        spec.validate()?;
        Ok(spec)
    }

    /// Global label ranges must be disjoint and tile `0..total` exactly;
    /// expert ids must be `0..n`.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("mixture has no experts".into()));
        }
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.expert_id).collect();
        ids.sort_unstable();
        if ids != (0..self.entries.len()).collect::<Vec<_>>() {
            return Err(Error::Config(format!(
                "expert ids must be 0..{}, got {ids:?}",
                self.entries.len()
            )));
        }
        let mut ranges: Vec<_> = self.entries.iter().map(|e| e.global_range()).collect();
        ranges.sort_by_key(|r| r.start);
        let mut next = 0;
        for r in &ranges {
            if r.is_empty() {
                return Err(Error::Config("mixture entry with zero classes".into()));
            }
            if r.start != next {
                return Err(Error::Config(format!(
                    "global label ranges overlap or leave a gap at {next}: {ranges:?}"
                )));
            }
            next = r.end;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_classes(&self) -> usize {
        self.entries.iter().map(|e| e.class_count).sum()
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.entries.iter().map(|e| e.dataset.to_string()).collect();
        parts.join(",")
    }
}

/// Interleaved test samples from every expert's dataset.
#[derive(Clone, Debug)]
pub struct MixedDataset {
    pub images: Vec<Image>,
    pub global_labels: Vec<usize>,
    pub local_labels: Vec<usize>,
    /// Expert id whose dataset produced each sample.
    pub sources: Vec<usize>,
    pub total_classes: usize,
}

impl MixedDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.total_classes];
        for &l in &self.global_labels {
            h[l] += 1;
        }
        h
    }
}

/// Merges the component test sets of a mixture (one per entry, same order)
/// and shuffles them with `seed`.
pub fn build_mixed_testset(
    spec: &MixtureSpec,
    components: &[&ImageDataset],
    seed: u64,
) -> Result<MixedDataset> {
    spec.validate()?;
    if components.len() != spec.len() {
        return Err(Error::Config(format!(
            "mixture has {} experts but {} test sets were given",
            spec.len(),
            components.len()
        )));
    }
    let mut samples = Vec::new();
    for (entry, ds) in spec.entries.iter().zip(components) {
        if ds.class_count != entry.class_count {
            return Err(Error::Config(format!(
                "{} has {} classes, mixture slot expects {}",
                ds.name, ds.class_count, entry.class_count
            )));
        }
        for (i, &local) in ds.labels().iter().enumerate() {
            samples.push((ds.image(i), local, entry.offset + local, entry.expert_id));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let mut out = MixedDataset {
        images: Vec::with_capacity(samples.len()),
        global_labels: Vec::with_capacity(samples.len()),
        local_labels: Vec::with_capacity(samples.len()),
        sources: Vec::with_capacity(samples.len()),
        total_classes: spec.total_classes(),
    };
    for (img, local, global, src) in samples {
        out.images.push(img);
        out.local_labels.push(local);
        out.global_labels.push(global);
        out.sources.push(src);
    }
    Ok(out)
}
