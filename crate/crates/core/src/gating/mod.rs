//! Expert selection from concatenated expert outputs.

pub mod augment;
pub mod logits;
pub mod naive;

pub use logits::{concat, ConcatenatedLogits, DecisionPath, ExpertLogits, GatingDecision, Segment};
pub use naive::{
    decide_argmax, decide_overall_ratio, decide_q3diff, decide_ratio, decide_std, evaluate_naive,
    evaluate_naive_outputs, GatingReport, Statistic,
};

use crate::data::{DatasetRef, Image, MixedDataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::expert::{ExpertModel, ExpertOutputs};

/// Experts in mixture order, with contiguous global label offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    experts: Vec<ExpertModel>,
}

impl Mixture {
    /// Takes experts in order and assigns each the global labels right
    /// after its predecessor's.
    pub fn new(mut experts: Vec<ExpertModel>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::Config("mixture has no experts".into()));
        }
        let mut offset = 0;
        for e in &mut experts {
            e.global_offset = offset;
            offset += e.class_count;
        }
        Ok(Mixture { experts })
    }

    pub fn experts(&self) -> &[ExpertModel] {
        &self.experts
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn spec(&self) -> MixtureSpec {
        let parts: Vec<(DatasetRef, usize)> = self
            .experts
            .iter()
            .map(|e| (e.dataset.clone(), e.class_count))
            .collect();
        MixtureSpec::contiguous(&parts).expect("offsets are contiguous by construction")
    }

    pub fn total_classes(&self) -> usize {
        self.experts.iter().map(|e| e.class_count).sum()
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.experts
            .iter()
            .enumerate()
            .map(|(id, e)| Segment {
                expert_id: id,
                start: e.global_offset,
                len: e.class_count,
                global_offset: e.global_offset,
            })
            .collect()
    }

    /// Runs every expert over `images`.
    pub fn trace(&self, images: &[&Image]) -> Result<MixtureOutputs> {
        let outputs = self
            .experts
            .iter()
            .map(|e| e.infer_all(images))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureOutputs {
            outputs,
            segments: self.segments(),
        })
    }

    pub fn trace_mixed(&self, test: &MixedDataset) -> Result<MixtureOutputs> {
        let refs: Vec<&Image> = test.images.iter().collect();
        self.trace(&refs)
    }
}

/// Every expert's outputs over the same list of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOutputs {
    pub outputs: Vec<ExpertOutputs>,
    segments: Vec<Segment>,
}

impl MixtureOutputs {
    pub fn len(&self) -> usize {
        self.outputs.first().map_or(0, ExpertOutputs::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenated logits of input `i`.
    pub fn concat(&self, i: usize) -> ConcatenatedLogits {
        let flat = self
            .outputs
            .iter()
            .flat_map(|o| o.logits.item(i).iter().copied())
            .collect();
        ConcatenatedLogits::with_layout(self.segments.clone(), flat).expect("layout matches expert widths")
    }
}
