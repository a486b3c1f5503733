use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::cross_entropy_loss;
use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step, in `[1e-4, 1e-2]`.
    pub epsilon: f64,
    /// Check a seeded random subset of this many parameters; `None` checks all.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-3,
            max_params: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat parameter index (see [`Network::params`]) of the worst entry.
    pub worst_param: Option<usize>,
    pub checked: usize,
}

/// Compares backprop gradients of the cross-entropy loss against central
/// differences.
///
/// The analytic side is the single-precision backward pass used for
/// training. The numeric side re-evaluates the loss on a double-precision
/// copy of the network so the difference quotient is not swamped by f32
/// rounding. Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(
    network: &Network<f32>,
    sample: &Tensor<f32>,
    labels: &[usize],
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let eps = options.epsilon;
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {eps} outside [1e-4, 1e-2]"
        )));
    }
    let trace = network.forward(sample)?;
    let (_, grad_logits) = cross_entropy_loss(trace.logits(), labels)?;
    let grads = network.backward(sample, &trace, &grad_logits)?;
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|g| g.weight.iter().chain(g.bias.iter()))
        .map(|&v| f64::from(v))
        .collect();

    let total = analytic.len();
    let indices: Vec<usize> = match options.max_params {
        Some(k) if k < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            let mut idx = rand::seq::index::sample(&mut rng, total, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    };

    let mut net64: Network<f64> = network.cast();
    let x64: Tensor<f64> = sample.cast();
    let loss_at = |net: &Network<f64>| -> Result<f64> {
        let logits = net.predict(&x64)?;
        Ok(cross_entropy_loss(&logits, labels)?.0)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: None,
        checked: indices.len(),
    };
    for &p in &indices {
        let original = *net64.params().nth(p).unwrap();
        *net64.params_mut().nth(p).unwrap() = original + eps;
        let plus = loss_at(&net64)?;
        *net64.params_mut().nth(p).unwrap() = original - eps;
        let minus = loss_at(&net64)?;
        *net64.params_mut().nth(p).unwrap() = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[p];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > report.max_relative_error || report.worst_param.is_none() {
            report.max_relative_error = err;
            report.worst_param = Some(p);
        }
    }
    Ok(report)
}
