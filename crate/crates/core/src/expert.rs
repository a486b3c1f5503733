//! LeNet5 experts: construction, training, evaluation, traced inference and
//! persistence.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Architecture};
use crate::data::{adapt_channels, pad_to, stack_normalized, ChannelStats, DatasetRef, Image, ImageDataset};
use crate::error::{Error, Result};
use crate::nn::{fit, EpochStats, LayerSpec, Network, TrainConfig};
use crate::tensor::{argmax, Tensor};

/// Spatial resolution every expert consumes; smaller images are zero-padded.
pub const INPUT_SIZE: usize = 32;
/// Width of the penultimate dense layer, the "final FC" gating feature.
pub const FINAL_FC_WIDTH: usize = 84;

const INFERENCE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub config: TrainConfig,
    pub train_samples: usize,
    pub history: Vec<EpochStats>,
    pub final_accuracy: Option<f64>,
}

/// A LeNet5 network plus everything needed to feed it arbitrary images.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertModel {
    pub network: Network,
    pub input_channels: usize,
    pub class_count: usize,
    pub dataset: DatasetRef,
    pub global_offset: usize,
    /// Standardization applied after channel adaptation and padding.
    pub normalization: ChannelStats,
    pub metadata: Option<TrainingMetadata>,
}

/// Logits and final-FC activations for a batch of inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertOutputs {
    pub logits: Tensor,
    pub final_fc: Tensor,
}

impl ExpertOutputs {
    pub fn len(&self) -> usize {
        self.logits.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn concat(parts: Vec<ExpertOutputs>, classes: usize) -> Result<Self> {
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut logits = Vec::with_capacity(n * classes);
        let mut fc = Vec::with_capacity(n * FINAL_FC_WIDTH);
        for p in parts {
            logits.extend_from_slice(p.logits.data());
            fc.extend_from_slice(p.final_fc.data());
        }
        Ok(ExpertOutputs {
            logits: Tensor::new(vec![n, classes], logits)?,
            final_fc: Tensor::new(vec![n, FINAL_FC_WIDTH], fc)?,
        })
    }
}

pub fn lenet5_layers(class_count: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv {
            out_channels: 6,
            kernel: 5,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 2 },
        LayerSpec::Conv {
            out_channels: 16,
            kernel: 5,
            stride: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { out_dim: 120 },
        LayerSpec::Relu,
        LayerSpec::Dense {
            out_dim: FINAL_FC_WIDTH,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            out_dim: class_count,
        },
    ]
}

/// Untrained LeNet5 for `in_channels` x 32 x 32 inputs.
pub fn build_lenet5(in_channels: usize, class_count: usize) -> Result<ExpertModel> {
    if !matches!(in_channels, 1 | 3) {
        return Err(Error::InvalidArgument(format!(
            "experts take 1 or 3 input channels, got {in_channels}"
        )));
    }
    if class_count == 0 {
        return Err(Error::InvalidArgument("expert needs at least one class".into()));
    }
    let network = Network::new(&[in_channels, INPUT_SIZE, INPUT_SIZE], &lenet5_layers(class_count))?;
    Ok(ExpertModel {
        network,
        input_channels: in_channels,
        class_count,
        dataset: DatasetRef::full("untrained"),
        global_offset: 0,
        normalization: ChannelStats::identity(in_channels),
        metadata: None,
    })
}

/// Index of the layer whose output is the final-FC feature: the ReLU after
/// the second-to-last dense layer.
fn final_fc_index(network: &Network) -> Result<usize> {
    let dense: Vec<usize> = network
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l.spec, LayerSpec::Dense { .. }))
        .map(|(i, _)| i)
        .collect();
    let idx = dense
        .len()
        .checked_sub(2)
        .map(|k| dense[k] + 1)
        .ok_or_else(|| Error::InvalidArgument("network has no penultimate dense layer".into()))?;
    match network.layers().get(idx).map(|l| l.spec) {
        Some(LayerSpec::Relu) => Ok(idx),
        _ => Ok(idx - 1),
    }
}

impl ExpertModel {
    pub fn logit_width(&self) -> usize {
        self.class_count
    }

    /// Adapts channels, pads to 32x32 and standardizes.
    pub fn prepare_image(&self, image: &Image) -> Result<Image> {
        let img = adapt_channels(image, self.input_channels)?;
        pad_to(&img, INPUT_SIZE, INPUT_SIZE)
    }

    pub fn prepare(&self, images: &[&Image]) -> Result<Tensor> {
        let prepared = images
            .iter()
            .map(|img| self.prepare_image(img))
            .collect::<Result<Vec<_>>>()?;
        if prepared.is_empty() {
            return Ok(Tensor::zeros(vec![0, self.input_channels, INPUT_SIZE, INPUT_SIZE]));
        }
        stack_normalized(&prepared, &self.normalization)
    }

    /// Logits and final-FC activations for each image (single batch).
    pub fn infer_with_trace(&self, images: &[&Image]) -> Result<ExpertOutputs> {
        let batch = self.prepare(images)?;
        let mut trace = self.network.forward(&batch)?;
        let fc = final_fc_index(&self.network)?;
        let logits = trace.outputs.pop().unwrap();
        let final_fc = trace.outputs.swap_remove(fc);
        Ok(ExpertOutputs { logits, final_fc })
    }

    /// Batched, parallel inference over many images; output order matches input.
    pub fn infer_all(&self, images: &[&Image]) -> Result<ExpertOutputs> {
        let parts = images
            .par_chunks(INFERENCE_CHUNK)
            .map(|chunk| self.infer_with_trace(chunk))
            .collect::<Result<Vec<_>>>()?;
        ExpertOutputs::concat(parts, self.class_count)
    }

    pub fn infer_dataset(&self, ds: &ImageDataset) -> Result<ExpertOutputs> {
        let images: Vec<Image> = ds.images().collect();
        let refs: Vec<&Image> = images.iter().collect();
        self.infer_all(&refs)
    }

    /// Trains on `train` from the current weights, which are first
    /// initialized from `config.seed`. Normalization constants are taken
    /// from the padded training images.
    pub fn train(
        &mut self,
        train: &ImageDataset,
        config: &TrainConfig,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        config.validate()?;
        if train.class_count != self.class_count {
            return Err(Error::InvalidArgument(format!(
                "{} has {} classes, expert has {}",
                train.name, train.class_count, self.class_count
            )));
        }
        if train.channels != self.input_channels {
            return Err(Error::InvalidArgument(format!(
                "{} has {} channels, expert expects {}",
                train.name, train.channels, self.input_channels
            )));
        }
        let padded = pad_dataset(train)?;
        self.normalization = padded.channel_stats();
        let stats = self.normalization.clone();
        self.network.init(config.seed);
        let item = padded.image_len();
        let shape = [padded.channels, padded.height, padded.width];
        let history = fit(
            &mut self.network,
            padded.len(),
            padded.labels(),
            None,
            config,
            |idx| {
                let mut data = vec![0.0f32; idx.len() * item];
                for (&i, out) in idx.iter().zip(data.chunks_mut(item)) {
                    stats.apply_into(&padded.image(i), out);
                }
                let mut s = vec![idx.len()];
                s.extend_from_slice(&shape);
                Tensor::new(s, data)
            },
            |e| on_epoch(e),
        )?;
        self.metadata = Some(TrainingMetadata {
            seed: config.seed,
            config: config.clone(),
            train_samples: train.len(),
            history: history.clone(),
            final_accuracy: None,
        });
        Ok(history)
    }

    /// Fraction of samples whose logit argmax equals the label.
    pub fn evaluate(&self, test: &ImageDataset) -> Result<f64> {
        if test.class_count > self.class_count {
            return Err(Error::InvalidArgument(format!(
                "{} has {} classes, expert predicts {}",
                test.name, test.class_count, self.class_count
            )));
        }
        if test.is_empty() {
            return Err(Error::InvalidArgument(format!("{} is empty", test.name)));
        }
        let out = self.infer_dataset(test)?;
        Ok(accuracy(&out.logits, test.labels()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::json!({
            "kind": "expert",
            "architecture": Architecture::of(&self.network),
            "input_channels": self.input_channels,
            "class_count": self.class_count,
            "dataset": self.dataset,
            "global_offset": self.global_offset,
            "normalization": self.normalization,
            "training": self.metadata,
        });
        checkpoint::write(path, &header, &checkpoint::network_blobs(&self.network))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = checkpoint::read(path)?;
        Self::from_raw(raw, path)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let path = Path::new("<memory>");
        Self::from_raw(checkpoint::decode(bytes, path)?, path)
    }

    fn from_raw(raw: checkpoint::RawCheckpoint, path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            kind: String,
            architecture: Architecture,
            input_channels: usize,
            class_count: usize,
            dataset: DatasetRef,
            global_offset: usize,
            normalization: ChannelStats,
            training: Option<TrainingMetadata>,
        }
        let h: Header = serde_json::from_value(raw.header)?;
        if h.kind != "expert" {
            return Err(Error::format(path, format!("expected an expert checkpoint, found '{}'", h.kind)));
        }
        let network = checkpoint::network_from_blobs(&h.architecture, &mut raw.blobs.into_iter(), path)?;
        if network.output_shape() != [h.class_count] {
            return Err(Error::format(path, "final layer width differs from class count"));
        }
        Ok(ExpertModel {
            network,
            input_channels: h.input_channels,
            class_count: h.class_count,
            dataset: h.dataset,
            global_offset: h.global_offset,
            normalization: h.normalization,
            metadata: h.training,
        })
    }
}

/// Pads every image of a dataset to the expert resolution.
pub fn pad_dataset(ds: &ImageDataset) -> Result<ImageDataset> {
    if ds.height == INPUT_SIZE && ds.width == INPUT_SIZE {
        return Ok(ds.clone());
    }
    let mut pixels = Vec::with_capacity(ds.len() * ds.channels * INPUT_SIZE * INPUT_SIZE);
    for img in ds.images() {
        pixels.extend_from_slice(&pad_to(&img, INPUT_SIZE, INPUT_SIZE)?.pixels);
    }
    ImageDataset::new(
        ds.name.clone(),
        ds.class_count,
        (ds.channels, INPUT_SIZE, INPUT_SIZE),
        pixels,
        ds.labels().to_vec(),
    )
}

/// Argmax accuracy of logit rows against labels.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = logits
        .rows()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == Some(l))
        .count();
    correct as f64 / labels.len() as f64
}

/// Builds, trains and evaluates an expert for `dataset`.
pub fn train_expert(
    dataset: DatasetRef,
    train: &ImageDataset,
    test: Option<&ImageDataset>,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<ExpertModel> {
    let mut model = build_lenet5(train.channels, train.class_count)?;
    model.dataset = dataset;
    model.train(train, config, on_epoch)?;
    if let Some(test) = test {
        let acc = model.evaluate(test)?;
        if let Some(m) = model.metadata.as_mut() {
            m.final_accuracy = Some(acc);
        }
    }
    Ok(model)
}
