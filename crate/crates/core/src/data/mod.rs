//! Image datasets: file formats, class splits, channel and resolution
//! adaptation, and mixed test sets.

pub mod catalog;
pub mod cifar;
mod dataset;
pub mod idx;
mod image;
mod mixture;
pub mod synthetic;

pub use catalog::{DataCatalog, Split};
pub use cifar::load_cifar10;
pub use dataset::{ClassList, DatasetRef, ImageDataset};
pub use idx::load_idx;
pub use image::{adapt_channels, luminance, pad_to, ChannelStats, Image};
pub(crate) use image::stack_normalized;
pub use mixture::{build_mixed_testset, MixedDataset, MixtureEntry, MixtureSpec};
