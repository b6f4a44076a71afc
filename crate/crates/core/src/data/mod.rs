//! Dataset manifests, splits, black-image augmentation and preprocessing.

pub mod batches;
pub mod manifest;
pub mod preprocess;
pub mod synthetic;

pub use batches::{batches, epoch_order, load_batch, Batch, Batches};
pub use manifest::{AugmentMode, DatasetManifest, Entry, Label, LabelCounts, Origin, Split, BLACK_TRAIN_FRACTION};
pub use preprocess::{black_image, preprocess, resize_bilinear, ImageLoader};

/// Environment variable naming the default root for relative manifest paths.
pub const DATA_ROOT_ENV: &str = "KUTRALNET_DATA_ROOT";
