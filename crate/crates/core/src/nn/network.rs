use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layer::{Layer, LayerGrads, LayerSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Every layer output of one batched forward pass.
///
/// `outputs[i]` is the output of layer `i`; the last entry holds the
/// pre-softmax logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace<T: Scalar = f32> {
    pub outputs: Vec<Tensor<T>>,
}

impl<T: Scalar> ActivationTrace<T> {
    pub fn logits(&self) -> &Tensor<T> {
        self.outputs.last().expect("trace of an empty network")
    }

    pub fn layer(&self, index: usize) -> &Tensor<T> {
        &self.outputs[index]
    }
}

/// A type-checked chain of layers with parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    /// Builds a zero-initialized network; `input_shape` excludes the batch axis.
    pub fn new(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = Layer::new(*spec, &shape)?;
            shape = layer.out_shape.clone();
            layers.push(layer);
        }
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
        })
    }

    /// Fan-in scaled uniform weights in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`,
    /// zero biases.
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut self.layers {
            if layer.weight.is_empty() {
                continue;
            }
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut layer.weight {
                *w = T::from(dist.sample(&mut rng)).unwrap();
            }
            layer.bias.fill(T::zero());
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.layers.last().unwrap().out_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }

    /// Parameters in layer order, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        if batch.shape().len() != self.input_shape.len() + 1
            || batch.shape()[1..] != self.input_shape[..]
        {
            let mut expected = vec![batch.batch()];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::shape("network input", &expected, batch.shape()));
        }
        Ok(())
    }

    /// Runs the batch through every layer and keeps each layer output.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<ActivationTrace<T>> {
        self.check_input(batch)?;
        let n = batch.batch();
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outputs.last().map_or(batch.data(), |t| t.data());
            let data = layer.forward(input, n);
            let mut shape = vec![n];
            shape.extend_from_slice(&layer.out_shape);
            outputs.push(Tensor::new(shape, data)?);
        }
        Ok(ActivationTrace { outputs })
    }

    /// Logits only.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(batch)?.outputs.pop().unwrap())
    }

    /// Backpropagates `grad_logits` (gradient of the loss w.r.t. the logits)
    /// through the trace produced by [`forward`](Self::forward) on `batch`.
    pub fn backward(
        &self,
        batch: &Tensor<T>,
        trace: &ActivationTrace<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<Vec<LayerGrads<T>>> {
        self.check_input(batch)?;
        if grad_logits.shape() != trace.logits().shape() {
            return Err(Error::shape(
                "logit gradient",
                trace.logits().shape(),
                grad_logits.shape(),
            ));
        }
        let n = batch.batch();
        let mut grads: Vec<LayerGrads<T>> = self.layers.iter().map(Layer::zero_grads).collect();
        let mut grad = grad_logits.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = if i == 0 {
                batch.data()
            } else {
                trace.outputs[i - 1].data()
            };
            let output = trace.outputs[i].data();
            match layer.backward(input, output, &grad, n, &mut grads[i], i > 0) {
                Some(g) => grad = g,
                None => break,
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(out_dim: usize) -> LayerSpec {
        LayerSpec::Dense { out_dim }
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut net = Network::<f32>::new(&[3], &[dense(3)]).unwrap();
        net.layers_mut()[0].weight = vec![1., 0., 0., 0., 1., 0., 0., 0., 1.];
        let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 7.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap().data(), x.data());
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let net = Network::<f32>::new(
            &[1, 8, 8],
            &[
                LayerSpec::Conv {
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                dense(4),
            ],
        )
        .unwrap();
        let x = Tensor::new(vec![2, 1, 8, 8], (0..128).map(|v| v as f32).collect()).unwrap();
        assert!(net.predict(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let net = Network::<f32>::new(&[3], &[dense(2)]).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap();
        match net.forward(&x) {
            Err(Error::Shape {
                expected, actual, ..
            }) => {
                assert_eq!(expected, vec![1, 3]);
                assert_eq!(actual, vec![1, 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn init_is_seeded() {
        let mut a = Network::<f32>::new(&[4], &[dense(3), LayerSpec::Relu, dense(2)]).unwrap();
        let mut b = a.clone();
        a.init(7);
        b.init(7);
        assert_eq!(a, b);
        b.init(8);
        assert_ne!(a, b);
        let bound = (6.0f32 / 4.0).sqrt();
        assert!(a.layers()[0].weight.iter().all(|w| w.abs() <= bound));
    }
}
