use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::cifar;
use super::dataset::{DatasetRef, ImageDataset};
use super::idx::load_idx;
use super::synthetic;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn idx_prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Resolves dataset tags to loaded datasets.
///
/// File-backed tags live under the data root: `mnist/`, `fashion/` and
/// `kmnist/` hold IDX pairs (`train-images-idx3-ubyte`, optionally
/// gzipped), `cifar10/` holds the binary batches. Tags starting with
/// `synth-` are generated in memory.
#[derive(Debug)]
pub struct DataCatalog {
    root: Option<PathBuf>,
    limit: Option<usize>,
    synthetic_sizes: (usize, usize),
    cache: Mutex<HashMap<(String, Split), Arc<ImageDataset>>>,
}

pub const FILE_TAGS: [&str; 4] = ["mnist", "fashion", "kmnist", "cifar10"];

impl DataCatalog {
    pub fn new(root: Option<PathBuf>) -> Self {
        DataCatalog {
            root,
            limit: None,
            synthetic_sizes: (2000, 500),
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Caps every loaded split at `limit` samples (smoke runs).
    pub fn with_limit(mut self, limit: Option<usize>) -> Self {
        self.limit = limit;
        self
    }

    pub fn with_synthetic_sizes(mut self, train: usize, test: usize) -> Self {
        self.synthetic_sizes = (train, test);
        self
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn canonical_tag(tag: &str) -> &str {
        match tag {
            "kuzushiji" | "kuzushiji-mnist" => "kmnist",
            "fashion-mnist" => "fashion",
            "cifar" | "cifar-10" => "cifar10",
            other => other,
        }
    }

    pub fn class_count(tag: &str) -> Result<usize> {
        let tag = Self::canonical_tag(tag);
        if FILE_TAGS.contains(&tag) || synthetic::Family::from_tag(tag).is_some() {
            Ok(10)
        } else {
            Err(Error::Config(format!("unknown dataset tag '{tag}'")))
        }
    }

    pub fn ref_class_count(r: &DatasetRef) -> Result<usize> {
        match &r.classes {
            Some(c) => Ok(c.0.len()),
            None => Self::class_count(&r.tag),
        }
    }

    fn idx_paths(&self, dir: &Path, split: Split) -> Result<(PathBuf, PathBuf)> {
        let p = split.idx_prefix();
        let find = |kind: &str, dims: &str| -> Result<PathBuf> {
            let candidates = [
                format!("{p}-{kind}-{dims}-ubyte"),
                format!("{p}-{kind}.{dims}-ubyte"),
                format!("{p}-{kind}-{dims}-ubyte.gz"),
                format!("{p}-{kind}.{dims}-ubyte.gz"),
            ];
            candidates
                .iter()
                .map(|c| dir.join(c))
                .find(|c| c.exists())
                .ok_or_else(|| {
                    Error::format(dir, format!("missing {}", candidates[0]))
                })
        };
        Ok((find("images", "idx3")?, find("labels", "idx1")?))
    }

    fn root_for(&self, tag: &str) -> Result<PathBuf> {
        let root = self.root.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "dataset '{tag}' needs a data directory (--data-dir or MOE_DATA_DIR)"
            ))
        })?;
        Ok(root.join(tag))
    }

    /// Fails with a data error if any tag's files are absent.
    pub fn check_available(&self, tags: &[&str]) -> Result<()> {
        for &tag in tags {
            let tag = Self::canonical_tag(tag);
            if synthetic::Family::from_tag(tag).is_some() {
                continue;
            }
            Self::class_count(tag)?;
            let dir = self.root_for(tag)?;
            if tag == "cifar10" {
                let d = cifar::batch_dir(&dir);
                for f in cifar::TRAIN_BATCHES.iter().chain([&cifar::TEST_BATCH]) {
                    if !d.join(f).exists() {
                        return Err(Error::format(&d, format!("missing {f}")));
                    }
                }
            } else {
                self.idx_paths(&dir, Split::Train)?;
                self.idx_paths(&dir, Split::Test)?;
            }
        }
        Ok(())
    }

    fn load_uncached(&self, tag: &str, split: Split) -> Result<ImageDataset> {
        if synthetic::Family::from_tag(tag).is_some() {
            let (n, seed) = match split {
                Split::Train => (self.synthetic_sizes.0, 1),
                Split::Test => (self.synthetic_sizes.1, 2),
            };
            return synthetic::generate_tag(tag, n, seed);
        }
        Self::class_count(tag)?;
        let dir = self.root_for(tag)?;
        let mut ds = if tag == "cifar10" {
            cifar::load_cifar10(&dir, split == Split::Train)?
        } else {
            let (images, labels) = self.idx_paths(&dir, split)?;
            load_idx(&images, &labels, tag, 10)?
        };
        ds.name = tag.to_string();
        Ok(ds)
    }

    /// Loads a full dataset split (cached).
    pub fn load(&self, tag: &str, split: Split) -> Result<Arc<ImageDataset>> {
        let tag = Self::canonical_tag(tag).to_string();
        if let Some(ds) = self.cache.lock().unwrap().get(&(tag.clone(), split)) {
            return Ok(Arc::clone(ds));
        }
        let mut ds = self.load_uncached(&tag, split)?;
        if let Some(n) = self.limit {
            ds.truncate(n);
        }
        let ds = Arc::new(ds);
        self.cache
            .lock()
            .unwrap()
            .insert((tag, split), Arc::clone(&ds));
        Ok(ds)
    }

    /// Loads a split restricted to the reference's class subset.
    pub fn load_ref(&self, r: &DatasetRef, split: Split) -> Result<Arc<ImageDataset>> {
        let full = self.load(&r.tag, split)?;
        match &r.classes {
            None => Ok(full),
            Some(c) => Ok(Arc::new(full.split_by_class(&c.0)?)),
        }
    }
}
