//! One seed's worth of trained models and cached traces, shared by the
//! experiment runner and the individual CLI subcommands.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::config::{AugmentationPreset, ExperimentConfig, ProblemConfig};
use crate::data::{build_mixed_testset, DataCatalog, DatasetRef, Image, ImageDataset, MixedDataset, Split};
use crate::error::{Error, Result};
use crate::expert::{train_expert, ExpertModel, ExpertOutputs};
use crate::gating::augment::evaluate_augmented;
use crate::gating::{evaluate_naive_outputs, GatingReport, Mixture, MixtureOutputs, Statistic};
use crate::nn::TrainConfig;
use crate::pan::upan::{sc2_select, train_fpan, upan_from_outputs, FpanModel};
use crate::pan::{
    attribution_from_outputs, evaluate_coordinator_outputs, train_pan, AttributionDataset, CoordinatorReport,
    FeatureKind, Gate, PanModel, TracedGroup,
};

/// Seed for one named component of a seed's pipeline.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let d = Sha256::digest(format!("{seed}/{label}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Per-expert PAN results of one SC1 run.
#[derive(Clone, Debug)]
pub struct Sc1Outcome {
    pub pans: Vec<PanModel>,
    /// Attribution accuracy of each PAN on test-set features.
    pub attribution: Vec<f64>,
    pub coordinator: CoordinatorReport,
}

#[derive(Clone, Debug)]
pub struct UpanOutcome {
    pub attribution: f64,
    pub sc2: CoordinatorReport,
}

#[derive(Clone, Debug)]
pub struct FpanOutcome {
    pub model: FpanModel,
    /// Agreement with SC2 on the training pool.
    pub agreement: f64,
    /// Routing accuracy on held-out test images (true source expert).
    pub routing: f64,
    /// SC2's own routing accuracy on the same held-out images.
    pub sc2_routing: f64,
}

type TraceKey = (DatasetRef, DatasetRef, Split);

pub struct Session<'a> {
    pub config: &'a ExperimentConfig,
    pub catalog: &'a DataCatalog,
    pub seed: u64,
    experts: HashMap<DatasetRef, ExpertModel>,
    accuracy: HashMap<DatasetRef, f64>,
    traces: HashMap<TraceKey, Arc<ExpertOutputs>>,
    mixed: HashMap<String, (Arc<MixedDataset>, Arc<MixtureOutputs>)>,
    upans: HashMap<(String, FeatureKind), Arc<PanModel>>,
}

impl<'a> Session<'a> {
    pub fn new(config: &'a ExperimentConfig, catalog: &'a DataCatalog, seed: u64) -> Self {
        Session {
            config,
            catalog,
            seed,
            experts: HashMap::new(),
            accuracy: HashMap::new(),
            traces: HashMap::new(),
            mixed: HashMap::new(),
            upans: HashMap::new(),
        }
    }

    fn train_config(&self, base: &TrainConfig, label: &str) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, label),
            ..base.clone()
        }
    }

    pub fn expert_path(&self, r: &DatasetRef) -> PathBuf {
        self.config
            .model_dir()
            .join(format!("seed-{}", self.seed))
            .join(format!("expert-{}.ckpt", r.slug()))
    }

    pub fn dataset(&self, r: &DatasetRef, split: Split) -> Result<Arc<ImageDataset>> {
        self.catalog.load_ref(r, split)
    }

    /// Loads the expert for `r` from the model directory when a checkpoint
    /// trained with the same settings exists, otherwise trains and saves it.
    pub fn expert(&mut self, r: &DatasetRef) -> Result<&ExpertModel> {
        if !self.experts.contains_key(r) {
            let train = self.dataset(r, Split::Train)?;
            let cfg = self.train_config(&self.config.expert_training, &format!("expert/{r}"));
            let path = self.expert_path(r);
            let cached = ExpertModel::load(&path).ok().filter(|m| {
                m.dataset == *r
                    && m.metadata
                        .as_ref()
                        .is_some_and(|md| md.config == cfg && md.train_samples == train.len())
            });
            let model = match cached {
                Some(m) => {
                    log::info!("seed {}: reusing expert {r} from {}", self.seed, path.display());
                    m
                }
                None => {
                    log::info!("seed {}: training expert {r} on {} images", self.seed, train.len());
                    let test = self.dataset(r, Split::Test)?;
                    let seed = self.seed;
                    let m = train_expert(r.clone(), &train, Some(&test), &cfg, |e| {
                        log::debug!("seed {seed}: {r} epoch {} loss {:.4}", e.epoch, e.mean_loss)
                    })?;
                    if let Some(dir) = path.parent() {
                        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    }
                    m.save(&path)?;
                    m
                }
            };
            self.experts.insert(r.clone(), model);
        }
        Ok(&self.experts[r])
    }

    pub fn expert_accuracy(&mut self, r: &DatasetRef) -> Result<f64> {
        if let Some(&a) = self.accuracy.get(r) {
            return Ok(a);
        }
        let test = self.dataset(r, Split::Test)?;
        let a = self.expert(r)?.evaluate(&test)?;
        self.accuracy.insert(r.clone(), a);
        Ok(a)
    }

    /// Mean own-test accuracy of the problem's experts: the accuracy a
    /// perfect gate would reach on a balanced mixture.
    pub fn ideal_target(&mut self, p: &ProblemConfig) -> Result<f64> {
        let accs = p
            .experts
            .iter()
            .map(|r| self.expert_accuracy(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(super::ideal_target(&accs))
    }

    pub fn mixture(&mut self, p: &ProblemConfig) -> Result<Mixture> {
        let experts = p
            .experts
            .iter()
            .map(|r| self.expert(r).cloned())
            .collect::<Result<Vec<_>>>()?;
        Mixture::new(experts)
    }

    /// Outputs of expert `e` over dataset `d`.
    pub fn trace(&mut self, e: &DatasetRef, d: &DatasetRef, split: Split) -> Result<Arc<ExpertOutputs>> {
        let key = (e.clone(), d.clone(), split);
        if let Some(t) = self.traces.get(&key) {
            return Ok(Arc::clone(t));
        }
        let ds = self.dataset(d, split)?;
        let t = Arc::new(self.expert(e)?.infer_dataset(&ds)?);
        self.traces.insert(key, Arc::clone(&t));
        Ok(t)
    }

    /// The problem's shuffled mixed test set and every expert's outputs on it.
    pub fn mixed(&mut self, p: &ProblemConfig) -> Result<(Arc<MixedDataset>, Arc<MixtureOutputs>)> {
        if let Some((m, o)) = self.mixed.get(&p.name) {
            return Ok((Arc::clone(m), Arc::clone(o)));
        }
        let mixture = self.mixture(p)?;
        let tests = p
            .experts
            .iter()
            .map(|r| self.dataset(r, Split::Test))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ImageDataset> = tests.iter().map(|t| t.as_ref()).collect();
        let mixed = build_mixed_testset(&mixture.spec(), &refs, derive_seed(self.seed, &format!("mix/{}", p.name)))?;
        let outputs = mixture.trace_mixed(&mixed)?;
        let entry = (Arc::new(mixed), Arc::new(outputs));
        self.mixed.insert(p.name.clone(), entry.clone());
        Ok(entry)
    }

    pub fn naive(&mut self, p: &ProblemConfig, stat: Statistic) -> Result<GatingReport> {
        let (mixed, outputs) = self.mixed(p)?;
        evaluate_naive_outputs(&outputs, &mixed.global_labels, stat)
    }

    /// `(mean, vote)` reports.
    pub fn augment(&mut self, p: &ProblemConfig, preset: &AugmentationPreset) -> Result<(GatingReport, GatingReport)> {
        let mixture = self.mixture(p)?;
        let (mixed, _) = self.mixed(p)?;
        let seed = derive_seed(self.seed, &format!("augment/{}/{}", p.name, preset.name));
        evaluate_augmented(&mixture, &mixed, &preset.augs, seed)
    }

    /// Attribution rows for expert `k` of `p`: its own dataset positive,
    /// the other experts' datasets negative.
    pub fn pan_dataset(&mut self, p: &ProblemConfig, k: usize, kind: FeatureKind, split: Split) -> Result<AttributionDataset> {
        let e = &p.experts[k];
        let traces = p
            .experts
            .iter()
            .map(|d| self.trace(e, d, split))
            .collect::<Result<Vec<_>>>()?;
        let groups: Vec<TracedGroup<'_>> = p
            .experts
            .iter()
            .zip(&traces)
            .enumerate()
            .map(|(j, (d, t))| TracedGroup {
                source: d.to_string(),
                positive: j == k,
                outputs: t,
            })
            .collect();
        let classes = self.expert(e)?.class_count;
        attribution_from_outputs(kind, k, classes, &groups)
    }

    pub fn sc1(&mut self, p: &ProblemConfig, kind: FeatureKind) -> Result<Sc1Outcome> {
        let mut pans = Vec::new();
        let mut attribution = Vec::new();
        for k in 0..p.experts.len() {
            let train = self.pan_dataset(p, k, kind, Split::Train)?;
            let test = self.pan_dataset(p, k, kind, Split::Test)?;
            let cfg = self.train_config(&self.config.pan_training, &format!("pan/{}/{k}/{kind}", p.name));
            let pan = train_pan(&train, Some(k), &cfg, |_| {})?;
            attribution.push(pan.evaluate(&test)?);
            pans.push(pan);
        }
        let (mixed, outputs) = self.mixed(p)?;
        let coordinator = evaluate_coordinator_outputs(&outputs, Gate::PerExpert(&pans), &mixed.global_labels)?;
        Ok(Sc1Outcome {
            pans,
            attribution,
            coordinator,
        })
    }

    /// Every expert of `p` tracing every dataset of `p`.
    pub fn upan_dataset(&mut self, p: &ProblemConfig, kind: FeatureKind, split: Split) -> Result<AttributionDataset> {
        let mut counts = Vec::new();
        let mut traces = Vec::new();
        for e in &p.experts {
            counts.push(self.expert(e)?.class_count);
            traces.push(
                p.experts
                    .iter()
                    .map(|d| self.trace(e, d, split))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let names: Vec<String> = p.experts.iter().map(ToString::to_string).collect();
        let refs: Vec<Vec<&ExpertOutputs>> = traces.iter().map(|row| row.iter().map(|t| t.as_ref()).collect()).collect();
        upan_from_outputs(kind, &counts, &names, &refs)
    }

    /// UPAN trained on the training splits of `p` (cached per kind).
    pub fn upan(&mut self, p: &ProblemConfig, kind: FeatureKind) -> Result<Arc<PanModel>> {
        let key = (p.name.clone(), kind);
        if let Some(u) = self.upans.get(&key) {
            return Ok(Arc::clone(u));
        }
        let ds = self.upan_dataset(p, kind, Split::Train)?;
        let cfg = self.train_config(&self.config.pan_training, &format!("upan/{}/{kind}", p.name));
        let u = Arc::new(train_pan(&ds, None, &cfg, |_| {})?);
        self.upans.insert(key, Arc::clone(&u));
        Ok(u)
    }

    /// UPAN attribution and SC2 accuracy on the test splits of `test`.
    /// Fails with an incompatible-features error when widths differ.
    pub fn evaluate_upan(&mut self, upan: &PanModel, test: &ProblemConfig) -> Result<UpanOutcome> {
        let mixture = self.mixture(test)?;
        Gate::Universal(upan).check(&mixture)?;
        let attr = self.upan_dataset(test, upan.kind, Split::Test)?;
        let (mixed, outputs) = self.mixed(test)?;
        Ok(UpanOutcome {
            attribution: upan.evaluate(&attr)?,
            sc2: evaluate_coordinator_outputs(&outputs, Gate::Universal(upan), &mixed.global_labels)?,
        })
    }

    pub fn fpan(&mut self, p: &ProblemConfig) -> Result<FpanOutcome> {
        let upan = self.upan(p, FeatureKind::OutputStats)?;
        let mixture = self.mixture(p)?;
        let n = self.config.fpan_pool;
        let take = |ds: Arc<ImageDataset>| {
            let mut d = (*ds).clone();
            d.truncate(n);
            d
        };
        let pool = p
            .experts
            .iter()
            .map(|r| self.dataset(r, Split::Train).map(take))
            .collect::<Result<Vec<_>>>()?;
        let held = p
            .experts
            .iter()
            .map(|r| self.dataset(r, Split::Test).map(take))
            .collect::<Result<Vec<_>>>()?;
        let pool_refs: Vec<&ImageDataset> = pool.iter().collect();
        let cfg = self.train_config(&self.config.fpan_training, &format!("fpan/{}", p.name));
        let model = train_fpan(&upan, &mixture, &pool_refs, &cfg, |_| {})?;

        let pool_images: Vec<Image> = pool.iter().flat_map(|d| d.images()).collect();
        let pool_img_refs: Vec<&Image> = pool_images.iter().collect();
        let teacher = sc2_select(&upan, &mixture, &pool_img_refs)?;
        let agreement = model.agreement(&pool_img_refs, &teacher)?;

        let held_images: Vec<Image> = held.iter().flat_map(|d| d.images()).collect();
        let held_refs: Vec<&Image> = held_images.iter().collect();
        let truth: Vec<usize> = held.iter().enumerate().flat_map(|(k, d)| std::iter::repeat_n(k, d.len())).collect();
        let routing = model.agreement(&held_refs, &truth)?;
        let sc2 = sc2_select(&upan, &mixture, &held_refs)?;
        let sc2_routing = sc2.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
        Ok(FpanOutcome {
            model,
            agreement,
            routing,
            sc2_routing,
        })
    }
}
