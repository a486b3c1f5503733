use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::logits::{ConcatenatedLogits, DecisionPath, GatingDecision};
use super::{Mixture, MixtureOutputs};
use crate::data::MixedDataset;
use crate::error::{Error, Result};

/// Statistic used to pick an expert from concatenated logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    Argmax,
    Ratio,
    OverallRatio,
    Q3Diff,
    Std,
}

impl Statistic {
    pub const ALL: [Statistic; 5] = [
        Statistic::Argmax,
        Statistic::Std,
        Statistic::Ratio,
        Statistic::OverallRatio,
        Statistic::Q3Diff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Argmax => "argmax",
            Statistic::Ratio => "ratio",
            Statistic::OverallRatio => "overall-ratio",
            Statistic::Q3Diff => "q3diff",
            Statistic::Std => "std",
        }
    }

    pub fn decide(self, c: &ConcatenatedLogits) -> Result<GatingDecision> {
        match self {
            Statistic::Argmax => Ok(decide_argmax(c)),
            Statistic::Ratio => decide_ratio(c),
            Statistic::OverallRatio => decide_overall_ratio(c),
            Statistic::Q3Diff => Ok(decide_q3diff(c)),
            Statistic::Std => Ok(decide_std(c)),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown statistic '{s}' (expected argmax, ratio, overall-ratio, q3diff or std)"
                ))
            })
    }
}

/// Position of the largest score; ties go to the lowest position.
fn first_max(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Largest logit anywhere in the concatenation.
pub fn decide_argmax(c: &ConcatenatedLogits) -> GatingDecision {
    let pos = first_max(c.flat().iter().map(|&v| f64::from(v)).enumerate()).expect("nonempty");
    c.decision_at(pos, DecisionPath::Statistic)
}

/// Each logit divided by the sum of its own expert's logits. Experts whose
/// logits sum to zero are skipped.
pub fn decide_ratio(c: &ConcatenatedLogits) -> Result<GatingDecision> {
    let mut scores = Vec::with_capacity(c.flat().len());
    for (k, seg) in c.segments().iter().enumerate() {
        let vals = c.segment_values(k);
        let sum: f64 = vals.iter().map(|&v| f64::from(v)).sum();
        if sum == 0.0 {
            continue;
        }
        scores.extend(
            vals.iter()
                .enumerate()
                .map(|(i, &v)| (seg.start + i, f64::from(v) / sum)),
        );
    }
    let pos = first_max(scores)
        .ok_or_else(|| Error::Undefined("every expert's logits sum to zero".into()))?;
    Ok(c.decision_at(pos, DecisionPath::Statistic))
}

/// Each logit divided by the sum of the whole concatenation.
pub fn decide_overall_ratio(c: &ConcatenatedLogits) -> Result<GatingDecision> {
    let sum: f64 = c.flat().iter().map(|&v| f64::from(v)).sum();
    if sum == 0.0 {
        return Err(Error::Undefined("concatenated logits sum to zero".into()));
    }
    let pos = first_max(c.flat().iter().map(|&v| f64::from(v) / sum).enumerate()).expect("nonempty");
    Ok(c.decision_at(pos, DecisionPath::Statistic))
}

/// Linear-interpolation quantile at `q * (n - 1)` of the sorted values.
pub fn quantile(values: &[f32], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
    sorted.sort_by(f64::total_cmp);
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn population_std(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / n;
    var.sqrt()
}

/// Expert with the widest gap between its max logit and its third quartile.
pub fn decide_q3diff(c: &ConcatenatedLogits) -> GatingDecision {
    let k = first_max((0..c.segments().len()).map(|k| {
        let v = c.segment_values(k);
        let max = v.iter().map(|&x| f64::from(x)).fold(f64::NEG_INFINITY, f64::max);
        (k, max - quantile(v, 0.75))
    }))
    .expect("nonempty");
    c.decision_for_segment(k, DecisionPath::Statistic)
}

/// Expert with the smallest population standard deviation of logits.
pub fn decide_std(c: &ConcatenatedLogits) -> GatingDecision {
    let k = first_max((0..c.segments().len()).map(|k| (k, -population_std(c.segment_values(k)))))
        .expect("nonempty");
    c.decision_for_segment(k, DecisionPath::Statistic)
}

/// Accuracy of one gating rule over a mixed test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Samples where the rule had no answer; counted as wrong.
    pub undefined: usize,
}

impl GatingReport {
    pub fn from_decisions(
        decisions: impl IntoIterator<Item = Result<GatingDecision>>,
        labels: &[usize],
    ) -> Result<Self> {
        let mut correct = 0;
        let mut undefined = 0;
        let mut total = 0;
        for (d, &label) in decisions.into_iter().zip(labels) {
            total += 1;
            match d {
                Ok(d) if d.global_class == label => correct += 1,
                Ok(_) => {}
                Err(Error::Undefined(_)) => undefined += 1,
                Err(e) => return Err(e),
            }
        }
        if total != labels.len() || total == 0 {
            return Err(Error::shape("gating decisions", &[labels.len()], &[total]));
        }
        Ok(GatingReport {
            accuracy: correct as f64 / total as f64,
            correct,
            total,
            undefined,
        })
    }
}

/// Naive gating over precomputed expert outputs.
pub fn evaluate_naive_outputs(
    outputs: &MixtureOutputs,
    labels: &[usize],
    stat: Statistic,
) -> Result<GatingReport> {
    GatingReport::from_decisions((0..outputs.len()).map(|i| stat.decide(&outputs.concat(i))), labels)
}

pub fn evaluate_naive(mixture: &Mixture, test: &MixedDataset, stat: Statistic) -> Result<GatingReport> {
    let outputs = mixture.trace_mixed(test)?;
    evaluate_naive_outputs(&outputs, &test.global_labels, stat)
}
