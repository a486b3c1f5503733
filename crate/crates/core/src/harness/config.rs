use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetRef;
use crate::error::{Error, Result};
use crate::gating::augment::{table_presets, Augmentation};
use crate::gating::Statistic;
use crate::nn::TrainConfig;
use crate::pan::FeatureKind;

/// One mixture of experts, one expert per dataset reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub name: String,
    pub experts: Vec<DatasetRef>,
}

/// A UPAN trained on one problem and evaluated on another.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub train: String,
    pub test: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPreset {
    pub name: String,
    pub augs: Vec<Augmentation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Experts,
    Naive,
    Augment,
    Sc1,
    Sc2,
    Fpan,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Expert checkpoints; defaults to `<out_dir>/models`.
    pub model_dir: Option<PathBuf>,
    /// Cap on samples per loaded split (smoke runs).
    pub limit: Option<usize>,
    /// Train/test sizes of generated `synth-*` datasets.
    pub synthetic_sizes: (usize, usize),
    pub methods: Vec<Method>,
    /// Problems gated by every method.
    pub problems: Vec<ProblemConfig>,
    /// Problems that only serve as UPAN transfer targets.
    pub transfer_only: Vec<ProblemConfig>,
    pub transfers: Vec<TransferConfig>,
    pub statistics: Vec<Statistic>,
    pub augmentations: Vec<AugmentationPreset>,
    pub pan_features: Vec<FeatureKind>,
    pub upan_features: Vec<FeatureKind>,
    pub expert_training: TrainConfig,
    pub pan_training: TrainConfig,
    pub fpan_training: TrainConfig,
    /// Training images per dataset in the FPAN pool.
    pub fpan_pool: usize,
    /// Concurrent seed pipelines.
    pub workers: usize,
}

fn refs(v: &[&str]) -> Vec<DatasetRef> {
    v.iter().map(|s| s.parse().expect("valid literal")).collect()
}

fn problem(name: &str, experts: &[&str]) -> ProblemConfig {
    ProblemConfig {
        name: name.into(),
        experts: refs(experts),
    }
}

fn transfer(train: &str, test: &str) -> TransferConfig {
    TransferConfig {
        train: train.into(),
        test: test.into(),
    }
}

impl ExperimentConfig {
    /// Full reproduction: disjoint MNIST and MNIST+CIFAR10, with
    /// Fashion+Kuzushiji as an unseen transfer mixture.
    pub fn reproduction() -> Self {
        ExperimentConfig {
            seeds: vec![0, 1, 2],
            data_dir: None,
            out_dir: PathBuf::from("results"),
            model_dir: None,
            limit: None,
            synthetic_sizes: (2000, 500),
            methods: vec![
                Method::Experts,
                Method::Naive,
                Method::Augment,
                Method::Sc1,
                Method::Sc2,
                Method::Fpan,
            ],
            problems: vec![
                problem("disjoint-mnist", &["mnist:0-4", "mnist:5-9"]),
                problem("mnist+cifar10", &["mnist", "cifar10"]),
            ],
            transfer_only: vec![problem("fashion+kmnist", &["fashion", "kmnist"])],
            transfers: vec![
                transfer("disjoint-mnist", "disjoint-mnist"),
                transfer("mnist+cifar10", "mnist+cifar10"),
                transfer("disjoint-mnist", "mnist+cifar10"),
                transfer("mnist+cifar10", "disjoint-mnist"),
                transfer("disjoint-mnist", "fashion+kmnist"),
                transfer("mnist+cifar10", "fashion+kmnist"),
            ],
            statistics: Statistic::ALL.to_vec(),
            augmentations: table_presets()
                .into_iter()
                .map(|(n, augs)| AugmentationPreset { name: n.into(), augs })
                .collect(),
            pan_features: FeatureKind::ALL.to_vec(),
            upan_features: vec![FeatureKind::OutputLogits, FeatureKind::OutputStats],
            expert_training: TrainConfig::default(),
            pan_training: TrainConfig::default(),
            fpan_training: TrainConfig {
                epochs: 3,
                ..TrainConfig::default()
            },
            fpan_pool: 5000,
            workers: 1,
        }
    }

    /// Same layout on generated datasets; runs without any files.
    pub fn synthetic() -> Self {
        let mut c = Self::reproduction();
        c.seeds = vec![0];
        c.synthetic_sizes = (600, 200);
        c.problems = vec![
            problem("synth-disjoint", &["synth-strokes:0-4", "synth-strokes:5-9"]),
            problem("synth-gray+rgb", &["synth-strokes", "synth-blobs"]),
        ];
        c.transfer_only = vec![problem("synth-boxes+stripes", &["synth-boxes", "synth-stripes"])];
        c.transfers = vec![
            transfer("synth-disjoint", "synth-disjoint"),
            transfer("synth-gray+rgb", "synth-gray+rgb"),
            transfer("synth-disjoint", "synth-gray+rgb"),
            transfer("synth-gray+rgb", "synth-boxes+stripes"),
        ];
        c.expert_training.epochs = 6;
        c.pan_training.epochs = 5;
        c.fpan_training.epochs = 3;
        c.fpan_pool = 300;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "reproduction" | "paper" => Ok(Self::reproduction()),
            "synthetic" | "smoke" => Ok(Self::synthetic()),
            _ => Err(Error::Config(format!(
                "unknown preset '{name}' (expected reproduction or synthetic)"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn model_dir(&self) -> PathBuf {
        self.model_dir.clone().unwrap_or_else(|| self.out_dir.join("models"))
    }

    pub fn all_problems(&self) -> impl Iterator<Item = &ProblemConfig> {
        self.problems.iter().chain(&self.transfer_only)
    }

    pub fn problem(&self, name: &str) -> Result<&ProblemConfig> {
        self.all_problems()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown problem '{name}'")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("method list is empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        for p in self.all_problems() {
            if p.experts.len() < 2 {
                return Err(Error::Config(format!("problem '{}' needs at least 2 experts", p.name)));
            }
        }
        for t in &self.transfers {
            self.problem(&t.train)?;
            self.problem(&t.test)?;
        }
        for p in &self.augmentations {
            for a in &p.augs {
                a.validate()?;
            }
        }
        self.expert_training.validate()?;
        self.pan_training.validate()?;
        self.fpan_training.validate()?;
        Ok(())
    }

    /// SHA-256 of the settings that determine results; directories and the
    /// worker count are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.data_dir = None;
        c.out_dir = PathBuf::new();
        c.model_dir = None;
        c.workers = 1;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::reproduction().validate().unwrap();
        ExperimentConfig::synthetic().validate().unwrap();
    }

    #[test]
    fn empty_lists_rejected() {
        let mut c = ExperimentConfig::synthetic();
        c.methods.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::synthetic();
        c.seeds.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_directories() {
        let a = ExperimentConfig::synthetic();
        let mut b = a.clone();
        b.out_dir = "/elsewhere".into();
        b.workers = 4;
        assert_eq!(a.hash(), b.hash());
        b.seeds.push(9);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::reproduction();
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(text.contains("\"mnist:0-4\""));
    }
}
