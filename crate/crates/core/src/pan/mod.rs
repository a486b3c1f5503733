//! Pattern attribution networks (PANs): small classifiers that read an
//! expert's activations and answer whether the input belongs to that
//! expert, plus the coordinators built on them.

pub mod attribution;
pub mod upan;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attribution::{AttributionDataset, Provenance};

use crate::checkpoint::{self, Architecture};
use crate::data::{Image, ImageDataset, MixedDataset};
use crate::error::{Error, Result};
use crate::expert::{ExpertModel, ExpertOutputs, FINAL_FC_WIDTH};
use crate::gating::{decide_argmax, ConcatenatedLogits, DecisionPath, GatingDecision, GatingReport, Mixture, MixtureOutputs};
use crate::nn::{fit, softmax_in_place, EpochStats, LayerSpec, Network, TrainConfig};
use crate::tensor::Tensor;

/// Which activations a PAN reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// The expert's logits.
    OutputLogits,
    /// The 84-wide penultimate dense activations.
    FinalFc,
    /// `[mean, max, population std]` of the logits.
    OutputStats,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::OutputLogits, FeatureKind::FinalFc, FeatureKind::OutputStats];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::OutputLogits => "logits",
            FeatureKind::FinalFc => "finalfc",
            FeatureKind::OutputStats => "stats",
        }
    }

    /// Feature width for an expert with `class_count` logits.
    pub fn width(self, class_count: usize) -> usize {
        match self {
            FeatureKind::OutputLogits => class_count,
            FeatureKind::FinalFc => FINAL_FC_WIDTH,
            FeatureKind::OutputStats => 3,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" | "outputs" => Ok(FeatureKind::OutputLogits),
            "finalfc" | "final-fc" => Ok(FeatureKind::FinalFc),
            "stats" | "output-stats" => Ok(FeatureKind::OutputStats),
            _ => Err(Error::Config(format!("unknown feature '{s}' (expected logits, finalfc or stats)"))),
        }
    }
}

/// `[mean, max, population std]` of a logit vector.
pub fn output_stats(logits: &[f32]) -> [f32; 3] {
    let n = logits.len() as f64;
    let mean = logits.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let var = logits.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    [mean as f32, max, var.sqrt() as f32]
}

/// Features of input `i` from a batch of expert outputs.
pub fn extract_features(outputs: &ExpertOutputs, i: usize, kind: FeatureKind) -> Vec<f32> {
    match kind {
        FeatureKind::OutputLogits => outputs.logits.item(i).to_vec(),
        FeatureKind::FinalFc => outputs.final_fc.item(i).to_vec(),
        FeatureKind::OutputStats => output_stats(outputs.logits.item(i)).to_vec(),
    }
}

/// Row-major features for every input in `outputs`.
pub fn feature_rows(outputs: &ExpertOutputs, kind: FeatureKind) -> Vec<f32> {
    match kind {
        FeatureKind::OutputLogits => outputs.logits.data().to_vec(),
        FeatureKind::FinalFc => outputs.final_fc.data().to_vec(),
        FeatureKind::OutputStats => outputs.logits.rows().flat_map(output_stats).collect(),
    }
}

/// One block of traced rows for [`attribution_from_outputs`].
pub struct TracedGroup<'a> {
    pub source: String,
    pub positive: bool,
    pub outputs: &'a ExpertOutputs,
}

/// Attribution rows from precomputed traces of one expert.
pub fn attribution_from_outputs(
    kind: FeatureKind,
    expert_id: usize,
    class_count: usize,
    groups: &[TracedGroup<'_>],
) -> Result<AttributionDataset> {
    let mut ds = AttributionDataset::new(kind, kind.width(class_count));
    for g in groups {
        ds.push_group(g.source.clone(), expert_id, g.positive, &feature_rows(g.outputs, kind))?;
    }
    if !groups.iter().any(|g| !g.positive) {
        log::warn!("attribution dataset for expert {expert_id} has no negative rows");
    }
    Ok(ds)
}

/// Traces the expert over its own dataset (positive rows) and every
/// negative dataset.
pub fn build_attribution_dataset(
    expert: &ExpertModel,
    expert_id: usize,
    positive: &ImageDataset,
    negatives: &[&ImageDataset],
    kind: FeatureKind,
) -> Result<AttributionDataset> {
    let pos = expert.infer_dataset(positive)?;
    let negs = negatives
        .iter()
        .map(|d| expert.infer_dataset(d))
        .collect::<Result<Vec<_>>>()?;
    let mut groups = vec![TracedGroup {
        source: positive.name.clone(),
        positive: true,
        outputs: &pos,
    }];
    for (d, o) in negatives.iter().zip(&negs) {
        groups.push(TracedGroup {
            source: d.name.clone(),
            positive: false,
            outputs: o,
        });
    }
    attribution_from_outputs(kind, expert_id, expert.class_count, &groups)
}

/// Per-feature standardization fitted on the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl FeatureScaler {
    pub fn fit(ds: &AttributionDataset) -> Self {
        let w = ds.width();
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0f64; w];
        let mut sq = vec![0.0f64; w];
        for row in ds.features().chunks(w) {
            for (j, &v) in row.iter().enumerate() {
                mean[j] += f64::from(v);
                sq[j] += f64::from(v) * f64::from(v);
            }
        }
        let mut std = vec![1.0f32; w];
        for j in 0..w {
            mean[j] /= n;
            let var = (sq[j] / n - mean[j] * mean[j]).max(0.0);
            if var.sqrt() > 1e-6 {
                std[j] = var.sqrt() as f32;
            }
        }
        FeatureScaler {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    pub fn apply(&self, rows: &mut [f32]) {
        let w = self.mean.len();
        for row in rows.chunks_mut(w) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanMetadata {
    pub config: TrainConfig,
    pub rows: usize,
    pub history: Vec<EpochStats>,
}

/// Attribution network `width -> 64 -> 32 -> 2` over standardized features.
/// Logit 0 means "not mine", logit 1 means "mine".
#[derive(Clone, Debug, PartialEq)]
pub struct PanModel {
    pub network: Network,
    pub kind: FeatureKind,
    /// Owning expert; `None` for a universal PAN.
    pub expert_id: Option<usize>,
    pub scaler: FeatureScaler,
    pub metadata: Option<PanMetadata>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attribution {
    pub belongs: bool,
    /// Softmax probability of the "mine" logit.
    pub confidence: f32,
}

pub fn pan_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense { out_dim: 64 },
        LayerSpec::Relu,
        LayerSpec::Dense { out_dim: 32 },
        LayerSpec::Relu,
        LayerSpec::Dense { out_dim: 2 },
    ]
}

/// Per-row weights `n / (2 * count(label))`, so both labels carry equal
/// total weight. Falls back to uniform weights when a label is absent.
pub fn inverse_frequency_weights(labels: &[bool]) -> Vec<f32> {
    let t = labels.iter().filter(|&&l| l).count();
    let f = labels.len() - t;
    if t == 0 || f == 0 {
        return vec![1.0; labels.len()];
    }
    let n = labels.len() as f64;
    let wt = (n / (2.0 * t as f64)) as f32;
    let wf = (n / (2.0 * f as f64)) as f32;
    labels.iter().map(|&l| if l { wt } else { wf }).collect()
}

/// Trains a PAN with class-balanced cross-entropy.
pub fn train_pan(
    ds: &AttributionDataset,
    expert_id: Option<usize>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<PanModel> {
    if ds.is_empty() {
        return Err(Error::InvalidArgument("attribution dataset is empty".into()));
    }
    let scaler = FeatureScaler::fit(ds);
    let mut x = ds.features().to_vec();
    scaler.apply(&mut x);
    let w = ds.width();
    let labels: Vec<usize> = ds.labels().iter().map(|&l| usize::from(l)).collect();
    let weights = inverse_frequency_weights(ds.labels());
    let mut network = Network::new(&[w], &pan_layers())?;
    network.init(config.seed);
    let history = fit(
        &mut network,
        ds.len(),
        &labels,
        Some(&weights),
        config,
        |idx| {
            let mut b = Vec::with_capacity(idx.len() * w);
            for &i in idx {
                b.extend_from_slice(&x[i * w..(i + 1) * w]);
            }
            Tensor::new(vec![idx.len(), w], b)
        },
        |e| on_epoch(e),
    )?;
    Ok(PanModel {
        network,
        kind: ds.kind,
        expert_id,
        scaler,
        metadata: Some(PanMetadata {
            config: config.clone(),
            rows: ds.len(),
            history,
        }),
    })
}

impl PanModel {
    pub fn width(&self) -> usize {
        self.network.input_shape()[0]
    }

    /// Attributions for row-major features of width [`width`](Self::width).
    pub fn attribute_rows(&self, features: &[f32]) -> Result<Vec<Attribution>> {
        let w = self.width();
        if !features.len().is_multiple_of(w) {
            return Err(Error::IncompatibleFeatures(format!(
                "PAN reads {w}-wide features, got {} values",
                features.len()
            )));
        }
        let mut x = features.to_vec();
        self.scaler.apply(&mut x);
        let logits = self.network.predict(&Tensor::new(vec![x.len() / w, w], x)?)?;
        Ok(logits
            .rows()
            .map(|row| {
                let mut p = [row[0], row[1]];
                softmax_in_place(&mut p);
                Attribution {
                    belongs: row[1] > row[0],
                    confidence: p[1],
                }
            })
            .collect())
    }

    pub fn attribute(&self, features: &[f32]) -> Result<Attribution> {
        if features.len() != self.width() {
            return Err(Error::IncompatibleFeatures(format!(
                "PAN reads {}-wide features, got {}",
                self.width(),
                features.len()
            )));
        }
        Ok(self.attribute_rows(features)?[0])
    }

    /// Fails unless the PAN can read `kind` features of an expert with
    /// `class_count` logits.
    pub fn check_compatible(&self, class_count: usize) -> Result<()> {
        let w = self.kind.width(class_count);
        if w != self.width() {
            return Err(Error::IncompatibleFeatures(format!(
                "N/A: PAN was trained on {}-wide {} features but this expert yields {w}",
                self.width(),
                self.kind
            )));
        }
        Ok(())
    }

    /// Fraction of rows whose attribution equals the label.
    pub fn evaluate(&self, ds: &AttributionDataset) -> Result<f64> {
        if ds.kind != self.kind || ds.width() != self.width() {
            return Err(Error::IncompatibleFeatures(format!(
                "N/A: PAN reads {}-wide {} features, dataset has {}-wide {}",
                self.width(),
                self.kind,
                ds.width(),
                ds.kind
            )));
        }
        if ds.is_empty() {
            return Err(Error::InvalidArgument("attribution dataset is empty".into()));
        }
        let att = self.attribute_rows(ds.features())?;
        let correct = att.iter().zip(ds.labels()).filter(|(a, &l)| a.belongs == l).count();
        Ok(correct as f64 / ds.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "kind": "pan",
            "feature": self.kind,
            "expert_id": self.expert_id,
            "architecture": Architecture::of(&self.network),
            "scaler": self.scaler,
            "training": self.metadata,
        });
        checkpoint::write(path, &header, &checkpoint::network_blobs(&self.network))
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            kind: String,
            feature: FeatureKind,
            expert_id: Option<usize>,
            architecture: Architecture,
            scaler: FeatureScaler,
            training: Option<PanMetadata>,
        }
        let raw = checkpoint::read(path)?;
        let h: Header = serde_json::from_value(raw.header)?;
        if h.kind != "pan" {
            return Err(Error::format(path, format!("expected a PAN checkpoint, found '{}'", h.kind)));
        }
        let network = checkpoint::network_from_blobs(&h.architecture, &mut raw.blobs.into_iter(), path)?;
        if network.output_shape() != [2] || h.scaler.mean.len() != network.input_shape()[0] {
            return Err(Error::format(path, "PAN widths are inconsistent"));
        }
        Ok(PanModel {
            network,
            kind: h.feature,
            expert_id: h.expert_id,
            scaler: h.scaler,
            metadata: h.training,
        })
    }
}

/// Coordinator rule: if exactly one expert claims the input, that expert's
/// argmax is the answer; otherwise fall back to the argmax over the whole
/// concatenation.
pub fn coordinate(c: &ConcatenatedLogits, belongs: &[bool]) -> Result<GatingDecision> {
    if belongs.len() != c.segments().len() {
        return Err(Error::InvalidArgument(format!(
            "{} attributions for {} experts",
            belongs.len(),
            c.segments().len()
        )));
    }
    let mut claims = belongs.iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| k);
    match (claims.next(), claims.next()) {
        (Some(k), None) => Ok(c.decision_for_segment(k, DecisionPath::ExclusivePan)),
        _ => Ok(GatingDecision {
            path: DecisionPath::Fallback,
            ..decide_argmax(c)
        }),
    }
}

/// The PAN consulted for each expert: one per expert (SC1) or one shared
/// universal PAN (SC2).
#[derive(Clone, Copy, Debug)]
pub enum Gate<'a> {
    PerExpert(&'a [PanModel]),
    Universal(&'a PanModel),
}

impl<'a> Gate<'a> {
    fn pan(&self, expert: usize) -> &'a PanModel {
        match *self {
            Gate::PerExpert(p) => &p[expert],
            Gate::Universal(p) => p,
        }
    }

    /// Rejects PAN/expert count or feature-width mismatches up front.
    pub fn check(&self, mixture: &Mixture) -> Result<()> {
        if let Gate::PerExpert(p) = self {
            if p.len() != mixture.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} PANs for {} experts",
                    p.len(),
                    mixture.len()
                )));
            }
        }
        for (k, e) in mixture.experts().iter().enumerate() {
            self.pan(k).check_compatible(e.class_count)?;
        }
        Ok(())
    }

    /// Attributions of every expert for every input: `[expert][input]`.
    pub fn attribute_outputs(&self, outputs: &MixtureOutputs) -> Result<Vec<Vec<bool>>> {
        outputs
            .outputs
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let pan = self.pan(k);
                Ok(pan
                    .attribute_rows(&feature_rows(o, pan.kind))?
                    .into_iter()
                    .map(|a| a.belongs)
                    .collect())
            })
            .collect()
    }
}

/// Coordinated decision for one input.
pub fn coordinated_decide(mixture: &Mixture, gate: Gate<'_>, image: &Image) -> Result<GatingDecision> {
    gate.check(mixture)?;
    let outputs = mixture.trace(&[image])?;
    let att = gate.attribute_outputs(&outputs)?;
    let belongs: Vec<bool> = att.iter().map(|a| a[0]).collect();
    coordinate(&outputs.concat(0), &belongs)
}

pub fn sc1_decide(mixture: &Mixture, pans: &[PanModel], image: &Image) -> Result<GatingDecision> {
    coordinated_decide(mixture, Gate::PerExpert(pans), image)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorReport {
    pub gating: GatingReport,
    pub exclusive: usize,
    pub fallback: usize,
}

pub fn evaluate_coordinator_outputs(
    outputs: &MixtureOutputs,
    gate: Gate<'_>,
    labels: &[usize],
) -> Result<CoordinatorReport> {
    let att = gate.attribute_outputs(outputs)?;
    let decisions = (0..outputs.len())
        .map(|i| {
            let belongs: Vec<bool> = att.iter().map(|a| a[i]).collect();
            coordinate(&outputs.concat(i), &belongs)
        })
        .collect::<Result<Vec<_>>>()?;
    let exclusive = decisions.iter().filter(|d| d.path == DecisionPath::ExclusivePan).count();
    Ok(CoordinatorReport {
        exclusive,
        fallback: decisions.len() - exclusive,
        gating: GatingReport::from_decisions(decisions.into_iter().map(Ok), labels)?,
    })
}

pub fn evaluate_sc1(mixture: &Mixture, pans: &[PanModel], test: &MixedDataset) -> Result<CoordinatorReport> {
    let gate = Gate::PerExpert(pans);
    gate.check(mixture)?;
    let outputs = mixture.trace_mixed(test)?;
    evaluate_coordinator_outputs(&outputs, gate, &test.global_labels)
}
