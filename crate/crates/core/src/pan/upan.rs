//! Universal PAN (one attribution network shared by every expert), the
//! SC2 coordinator, and the fast PAN that routes raw images directly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    attribution_from_outputs, evaluate_coordinator_outputs, train_pan, AttributionDataset, CoordinatorReport,
    FeatureKind, Gate, PanModel, TracedGroup,
};
use crate::data::{adapt_channels, build_mixed_testset, pad_to, DatasetRef, Image, ImageDataset, MixedDataset};
use crate::error::{Error, Result};
use crate::expert::{build_lenet5, ExpertModel, ExpertOutputs, INPUT_SIZE};
use crate::gating::{GatingDecision, Mixture};
use crate::nn::{EpochStats, TrainConfig};

/// Feature width shared by every expert, or the reason there is none.
pub fn shared_width(kind: FeatureKind, class_counts: &[usize]) -> Result<usize> {
    let widths: Vec<usize> = class_counts.iter().map(|&c| kind.width(c)).collect();
    match widths.first() {
        Some(&w) if widths.iter().all(|&x| x == w) => Ok(w),
        Some(_) => Err(Error::IncompatibleFeatures(format!(
            "N/A: {kind} features differ in width across experts ({widths:?}); \
             a universal PAN needs architecture-agnostic features"
        ))),
        None => Err(Error::InvalidArgument("no experts".into())),
    }
}

/// Traces of every expert over every dataset: `traces[e][d]`.
pub fn trace_all(experts: &[&ExpertModel], datasets: &[&ImageDataset]) -> Result<Vec<Vec<ExpertOutputs>>> {
    experts
        .iter()
        .map(|e| datasets.iter().map(|d| e.infer_dataset(d)).collect())
        .collect()
}

/// UPAN rows from precomputed traces: expert `e` tracing dataset `d` is a
/// positive row iff `d == e`.
pub fn upan_from_outputs(
    kind: FeatureKind,
    class_counts: &[usize],
    names: &[String],
    traces: &[Vec<&ExpertOutputs>],
) -> Result<AttributionDataset> {
    let width = shared_width(kind, class_counts)?;
    if traces.len() != class_counts.len() || traces.iter().any(|t| t.len() != names.len()) || names.len() != class_counts.len() {
        return Err(Error::InvalidArgument("need one trace per expert and dataset".into()));
    }
    let mut ds = AttributionDataset::new(kind, width);
    for (e, row) in traces.iter().enumerate() {
        let groups: Vec<TracedGroup<'_>> = row
            .iter()
            .zip(names)
            .enumerate()
            .map(|(d, (o, n))| TracedGroup {
                source: n.clone(),
                positive: d == e,
                outputs: o,
            })
            .collect();
        ds.merge(&attribution_from_outputs(kind, e, class_counts[e], &groups)?)?;
    }
    Ok(ds)
}

/// Every expert traces every dataset of the mixture; `pairs[i]` is expert
/// `i` with its own dataset.
pub fn build_upan_dataset(pairs: &[(&ExpertModel, &ImageDataset)], kind: FeatureKind) -> Result<AttributionDataset> {
    let counts: Vec<usize> = pairs.iter().map(|(e, _)| e.class_count).collect();
    shared_width(kind, &counts)?;
    let experts: Vec<&ExpertModel> = pairs.iter().map(|(e, _)| *e).collect();
    let datasets: Vec<&ImageDataset> = pairs.iter().map(|(_, d)| *d).collect();
    let names: Vec<String> = datasets.iter().map(|d| d.name.clone()).collect();
    let traces = trace_all(&experts, &datasets)?;
    let refs: Vec<Vec<&ExpertOutputs>> = traces.iter().map(|row| row.iter().collect()).collect();
    upan_from_outputs(kind, &counts, &names, &refs)
}

pub fn train_upan(ds: &AttributionDataset, config: &TrainConfig, on_epoch: impl FnMut(&EpochStats)) -> Result<PanModel> {
    train_pan(ds, None, config, on_epoch)
}

pub fn sc2_decide(mixture: &Mixture, upan: &PanModel, image: &Image) -> Result<GatingDecision> {
    super::coordinated_decide(mixture, Gate::Universal(upan), image)
}

pub fn evaluate_sc2(mixture: &Mixture, upan: &PanModel, test: &MixedDataset) -> Result<CoordinatorReport> {
    let gate = Gate::Universal(upan);
    gate.check(mixture)?;
    let outputs = mixture.trace_mixed(test)?;
    evaluate_coordinator_outputs(&outputs, gate, &test.global_labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEvaluation {
    pub attribution_accuracy: f64,
    pub sc2: CoordinatorReport,
}

/// Attribution and SC2 accuracy of `upan` on a (possibly unseen) mixture,
/// given each expert's test set in mixture order.
pub fn cross_evaluate_upan(
    upan: &PanModel,
    mixture: &Mixture,
    tests: &[&ImageDataset],
    seed: u64,
) -> Result<CrossEvaluation> {
    Gate::Universal(upan).check(mixture)?;
    let pairs: Vec<(&ExpertModel, &ImageDataset)> = mixture.experts().iter().zip(tests.iter().copied()).collect();
    if pairs.len() != tests.len() {
        return Err(Error::InvalidArgument("need one test set per expert".into()));
    }
    let attr = build_upan_dataset(&pairs, upan.kind)?;
    let mixed = build_mixed_testset(&mixture.spec(), tests, seed)?;
    Ok(CrossEvaluation {
        attribution_accuracy: upan.evaluate(&attr)?,
        sc2: evaluate_sc2(mixture, upan, &mixed)?,
    })
}

/// Expert chosen by SC2 for each image.
pub fn sc2_select(upan: &PanModel, mixture: &Mixture, images: &[&Image]) -> Result<Vec<usize>> {
    let gate = Gate::Universal(upan);
    gate.check(mixture)?;
    let outputs = mixture.trace(images)?;
    let att = gate.attribute_outputs(&outputs)?;
    (0..images.len())
        .map(|i| {
            let belongs: Vec<bool> = att.iter().map(|a| a[i]).collect();
            super::coordinate(&outputs.concat(i), &belongs).map(|d| d.expert_id)
        })
        .collect()
}

/// Image-to-expert router distilled from SC2 decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct FpanModel {
    pub router: ExpertModel,
}

/// Brings any image to 3 x 32 x 32 so one router reads every dataset.
fn router_input(image: &Image) -> Result<Image> {
    pad_to(&adapt_channels(image, 3)?, INPUT_SIZE, INPUT_SIZE)
}

/// Trains a LeNet5 router on `pool` with SC2's selected expert as label.
pub fn train_fpan(
    upan: &PanModel,
    mixture: &Mixture,
    pool: &[&ImageDataset],
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<FpanModel> {
    if mixture.len() < 2 {
        return Err(Error::InvalidArgument("a fast PAN needs at least 2 experts".into()));
    }
    let distinct: std::collections::BTreeSet<&str> = pool.iter().map(|d| d.name.as_str()).collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "a fast PAN pool must draw from at least 2 datasets".into(),
        ));
    }
    let images: Vec<Image> = pool.iter().flat_map(|d| d.images()).collect();
    let refs: Vec<&Image> = images.iter().collect();
    let labels = sc2_select(upan, mixture, &refs)?;
    let mut pixels = Vec::with_capacity(images.len() * 3 * INPUT_SIZE * INPUT_SIZE);
    for img in &images {
        pixels.extend_from_slice(&router_input(img)?.pixels);
    }
    let train = ImageDataset::new("fpan-pool", mixture.len(), (3, INPUT_SIZE, INPUT_SIZE), pixels, labels)?;
    let mut router = build_lenet5(3, mixture.len())?;
    router.dataset = DatasetRef::full("fpan");
    router.train(&train, config, on_epoch)?;
    Ok(FpanModel { router })
}

impl FpanModel {
    /// Expert id for each image, one router forward pass per image.
    pub fn route(&self, images: &[&Image]) -> Result<Vec<usize>> {
        let prepared = images.iter().map(|i| router_input(i)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = prepared.iter().collect();
        let out = self.router.infer_all(&refs)?;
        Ok(out
            .logits
            .rows()
            .map(|r| crate::tensor::argmax(r).expect("nonempty"))
            .collect())
    }

    /// Fraction of images routed to `expected`.
    pub fn agreement(&self, images: &[&Image], expected: &[usize]) -> Result<f64> {
        if images.len() != expected.len() || images.is_empty() {
            return Err(Error::shape("routing targets", &[images.len()], &[expected.len()]));
        }
        let routed = self.route(images)?;
        Ok(routed.iter().zip(expected).filter(|(a, b)| a == b).count() as f64 / images.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.router.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let router = ExpertModel::load(path)?;
        if router.input_channels != 3 || router.dataset.tag != "fpan" {
            return Err(Error::format(path, "not a fast PAN checkpoint"));
        }
        Ok(FpanModel { router })
    }
}
