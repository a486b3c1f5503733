//! Data-free gating for mixtures of heterogeneous pre-trained experts.
//!
//! Experts are LeNet5-style CNNs trained independently on their own
//! datasets. Gating picks one expert per unknown input, using either simple
//! statistics of the concatenated expert logits, multi-pass augmentation
//! voting, one pattern attribution network (PAN) per expert (SC1), or one
//! universal PAN shared by every expert (SC2).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod expert;
pub mod gating;
pub mod harness;
pub mod nn;
pub mod pan;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
