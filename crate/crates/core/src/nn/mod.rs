//! Layer stack, loss, SGD training and gradient verification.

mod gradcheck;
mod layer;
mod loss;
mod network;
mod optim;

pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use layer::{Layer, LayerGrads, LayerSpec};
pub use loss::{cross_entropy_loss, softmax, softmax_in_place, weighted_cross_entropy_loss};
pub use network::{ActivationTrace, Network};
pub use optim::{fit, sgd_step, EpochStats, SgdState, TrainConfig};
