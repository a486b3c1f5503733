use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::argmax;

/// Placement of one expert's logits inside the concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub expert_id: usize,
    /// Start within the flat vector.
    pub start: usize,
    pub len: usize,
    /// First global class label owned by the expert.
    pub global_offset: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Expert logits for one input, joined in mixture order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatenatedLogits {
    flat: Vec<f32>,
    segments: Vec<Segment>,
}

/// One expert's contribution to [`concat`].
#[derive(Clone, Copy, Debug)]
pub struct ExpertLogits<'a> {
    pub expert_id: usize,
    pub global_offset: usize,
    pub logits: &'a [f32],
}

/// Joins per-expert logit vectors in the order given.
pub fn concat(parts: &[ExpertLogits<'_>]) -> Result<ConcatenatedLogits> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("no expert outputs to concatenate".into()));
    }
    let mut flat = Vec::with_capacity(parts.iter().map(|p| p.logits.len()).sum());
    let mut segments = Vec::with_capacity(parts.len());
    for p in parts {
        if p.logits.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "expert {} produced no logits",
                p.expert_id
            )));
        }
        segments.push(Segment {
            expert_id: p.expert_id,
            start: flat.len(),
            len: p.logits.len(),
            global_offset: p.global_offset,
        });
        flat.extend_from_slice(p.logits);
    }
    Ok(ConcatenatedLogits { flat, segments })
}

impl ConcatenatedLogits {
    /// Rebuilds a concatenation with the same layout around new values.
    pub fn with_layout(segments: Vec<Segment>, flat: Vec<f32>) -> Result<Self> {
        let mut expected = 0;
        for s in &segments {
            if s.start != expected || s.len == 0 {
                return Err(Error::InvalidArgument("segments must tile the flat vector".into()));
            }
            expected += s.len;
        }
        if expected != flat.len() || segments.is_empty() {
            return Err(Error::shape("concatenated logits", &[expected], &[flat.len()]));
        }
        Ok(ConcatenatedLogits { flat, segments })
    }

    pub fn flat(&self) -> &[f32] {
        &self.flat
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn offsets(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }

    pub fn segment_values(&self, k: usize) -> &[f32] {
        &self.flat[self.segments[k].range()]
    }

    /// Decision for flat position `pos`.
    pub fn decision_at(&self, pos: usize, path: DecisionPath) -> GatingDecision {
        let k = self
            .segments
            .iter()
            .position(|s| s.range().contains(&pos))
            .expect("position inside the concatenation");
        self.decision_in(k, pos - self.segments[k].start, path)
    }

    /// Decision naming segment `k` and class `local` within it.
    pub fn decision_in(&self, k: usize, local: usize, path: DecisionPath) -> GatingDecision {
        let s = self.segments[k];
        GatingDecision {
            expert_id: s.expert_id,
            local_class: local,
            global_class: s.global_offset + local,
            path,
        }
    }

    /// Decision for segment `k` with the class taken as its argmax.
    pub fn decision_for_segment(&self, k: usize, path: DecisionPath) -> GatingDecision {
        let local = argmax(self.segment_values(k)).expect("segments are nonempty");
        self.decision_in(k, local, path)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionPath {
    Statistic,
    ExclusivePan,
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatingDecision {
    pub expert_id: usize,
    pub local_class: usize,
    pub global_class: usize,
    pub path: DecisionPath,
}
