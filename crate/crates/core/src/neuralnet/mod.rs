//! Minimal neural-network engine: tensors, conv/pool/dense/dropout/ReLU/
//! softmax layers, categorical cross-entropy, reverse-mode gradients and
//! SGD/Adam, enough to train the classifier on small constellation images.

pub mod checkpoint;
mod layers;
mod network;
mod optim;
mod tensor;
mod train;

pub use layers::{softmax_in_place, Layer, LayerSpec};
pub use network::{argmax_rows, cross_entropy, Mode, NetKind, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{one_hot, Real, Tensor};
pub use train::{evaluate, par_batches, predict_labels, train, EpochStats, ImageSet, TrainConfig, TrainReport};

use crate::error::Result;
use crate::modem::ModulationScheme;

/// Hyperparameters of the four-conv, three-dense classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnSpec {
    pub conv_channels: [usize; 4],
    pub kernel: usize,
    pub padding: usize,
    pub dense: [usize; 2],
    pub dropout: f64,
}

impl Default for CnnSpec {
    fn default() -> Self {
        CnnSpec {
            conv_channels: [16, 16, 32, 32],
            kernel: 3,
            padding: 0,
            dense: [128, 64],
            dropout: 0.5,
        }
    }
}

impl CnnSpec {
    pub fn layers(&self, classes: usize) -> Vec<LayerSpec> {
        let conv = |c| LayerSpec::Conv2d {
            out_channels: c,
            kernel: (self.kernel, self.kernel),
            stride: 1,
            padding: self.padding,
        };
        let [c1, c2, c3, c4] = self.conv_channels;
        vec![
            conv(c1),
            LayerSpec::Relu,
            conv(c2),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: (2, 2) },
            conv(c3),
            LayerSpec::Relu,
            conv(c4),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: (2, 2) },
            LayerSpec::Dense { out_dim: self.dense[0] },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: self.dropout },
            LayerSpec::Dense { out_dim: self.dense[1] },
            LayerSpec::Relu,
            LayerSpec::Dense { out_dim: classes },
            LayerSpec::Softmax,
        ]
    }
}

/// The classifier for single-channel `height × width` images:
/// conv16-conv16-pool-conv32-conv32-pool-dense128-dropout-dense64-dense4.
pub fn build_amc_cnn<T: Real>(height: usize, width: usize, seed: u64) -> Result<Network<T>> {
    build_cnn(&CnnSpec::default(), height, width, seed)
}

pub fn build_cnn<T: Real>(spec: &CnnSpec, height: usize, width: usize, seed: u64) -> Result<Network<T>> {
    Network::new(
        NetKind::Classifier,
        vec![1, height, width],
        &spec.layers(ModulationScheme::COUNT),
        seed,
    )
}
