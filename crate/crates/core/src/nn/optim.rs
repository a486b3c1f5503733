use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerGrads;
use super::loss::weighted_cross_entropy_loss;
use super::network::Network;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters for minibatch SGD with momentum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub momentum: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be a non-negative finite number, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<LayerGrads<f32>>,
}

impl SgdState {
    pub fn new(network: &Network<f32>) -> Self {
        SgdState {
            velocity: network.layers().iter().map(|l| l.zero_grads()).collect(),
        }
    }
}

/// One SGD update on a batch. Returns the loss measured before the update.
///
/// `v <- momentum * v + grad; w <- w - lr * v`.
pub fn sgd_step(
    network: &mut Network<f32>,
    state: &mut SgdState,
    batch: &Tensor<f32>,
    labels: &[usize],
    sample_weights: Option<&[f32]>,
    config: &TrainConfig,
) -> Result<f32> {
    if batch.batch() == 0 {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    if state.velocity.len() != network.layers().len() {
        *state = SgdState::new(network);
    }
    let trace = network.forward(batch)?;
    let (loss, grad_logits) = weighted_cross_entropy_loss(trace.logits(), labels, sample_weights)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {loss}")));
    }
    let grads = network.backward(batch, &trace, &grad_logits)?;
    for (i, g) in grads.iter().enumerate() {
        if let Some(bad) = g.weight.iter().chain(&g.bias).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of layer {i} ({:?}) contains {bad}",
                network.layers()[i].spec
            )));
        }
    }
    let (lr, mu) = (config.learning_rate, config.momentum);
    for ((layer, g), v) in network
        .layers_mut()
        .iter_mut()
        .zip(&grads)
        .zip(&mut state.velocity)
    {
        for ((w, &gw), vw) in layer.weight.iter_mut().zip(&g.weight).zip(&mut v.weight) {
            *vw = mu * *vw + gw;
            *w -= lr * *vw;
        }
        for ((b, &gb), vb) in layer.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
            *vb = mu * *vb + gb;
            *b -= lr * *vb;
        }
    }
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Epoch loop over `n` samples materialized on demand by `make_batch`.
///
/// Sample order is reshuffled every epoch from `config.seed`, so the same
/// config and data give bit-identical weights.
pub fn fit(
    network: &mut Network<f32>,
    n: usize,
    labels: &[usize],
    sample_weights: Option<&[f32]>,
    config: &TrainConfig,
    mut make_batch: impl FnMut(&[usize]) -> Result<Tensor<f32>>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if labels.len() != n {
        return Err(Error::shape("training labels", &[n], &[labels.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = SgdState::new(network);
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch_labels = Vec::with_capacity(config.batch_size);
    let mut batch_weights = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let batch = make_batch(idx)?;
            batch_labels.clear();
            batch_labels.extend(idx.iter().map(|&i| labels[i]));
            let w = sample_weights.map(|w| {
                batch_weights.clear();
                batch_weights.extend(idx.iter().map(|&i| w[i]));
                batch_weights.as_slice()
            });
            let loss = sgd_step(network, &mut state, &batch, &batch_labels, w, config)?;
            total += f64::from(loss);
            batches += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / batches as f64,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut net = Network::<f32>::new(&[2], &[LayerSpec::Dense { out_dim: 2 }]).unwrap();
        net.init(3);
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let x = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut st = SgdState::new(&net);
        sgd_step(&mut net, &mut st, &x, &[0, 1], None, &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn non_finite_input_aborts() {
        let mut net = Network::<f32>::new(&[1], &[LayerSpec::Dense { out_dim: 2 }]).unwrap();
        net.init(1);
        let x = Tensor::new(vec![1, 1], vec![f32::INFINITY]).unwrap();
        let mut st = SgdState::new(&net);
        let err = sgd_step(&mut net, &mut st, &x, &[0], None, &TrainConfig::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }
}
