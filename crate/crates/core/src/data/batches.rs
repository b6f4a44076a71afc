//! Deterministic per-epoch batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::{DatasetManifest, Split};
use crate::data::preprocess::ImageLoader;
use crate::error::{DataError, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor<f32>,
    /// Class indices, 0 = no-fire, 1 = fire.
    pub labels: Vec<usize>,
    /// Manifest entry indices in batch order.
    pub indices: Vec<usize>,
}

/// Entry order for one epoch: the split's indices shuffled by `(seed, epoch)`.
pub fn epoch_order(manifest: &DatasetManifest, split: Split, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order = manifest.indices(split);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
}

/// Loads the entries at `indices` into one batch.
pub fn load_batch(manifest: &DatasetManifest, indices: &[usize], loader: &mut ImageLoader) -> Result<Batch> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let images = indices
        .iter()
        .map(|&i| loader.load(&manifest.entries[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch {
        images: Tensor::concat_batch(&images)?,
        labels: indices.iter().map(|&i| manifest.entries[i].label.index()).collect(),
        indices: indices.to_vec(),
    })
}

/// Iterator over the batches of one epoch; the last batch may be short.
pub struct Batches<'a> {
    manifest: &'a DatasetManifest,
    loader: &'a mut ImageLoader,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        Some(load_batch(self.manifest, idx, self.loader))
    }
}

pub fn batches<'a>(
    manifest: &'a DatasetManifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    loader: &'a mut ImageLoader,
) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let order = epoch_order(manifest, split, seed, epoch);
    if order.is_empty() {
        return Err(DataError::EmptySplit(split.to_string()).into());
    }
    Ok(Batches {
        manifest,
        loader,
        order,
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{AugmentMode, Entry, Label};

    fn black_set(n: usize) -> DatasetManifest {
        DatasetManifest::new("empty", Vec::<Entry>::new())
            .augment_black(AugmentMode::Add(n), 0)
            .unwrap()
    }

    #[test]
    fn sizes_include_partial_tail() {
        let mut m = black_set(10);
        for e in &mut m.entries {
            e.split = Some(Split::Train);
        }
        let mut loader = ImageLoader::new(None, 4);
        let sizes: Vec<usize> = batches(&m, Split::Train, 4, 1, 0, &mut loader)
            .unwrap()
            .map(|b| b.unwrap().labels.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn order_is_keyed_by_seed_and_epoch() {
        let mut m = black_set(50);
        for e in &mut m.entries {
            e.split = Some(Split::Train);
            e.label = Label::NoFire;
        }
        assert_eq!(epoch_order(&m, Split::Train, 3, 1), epoch_order(&m, Split::Train, 3, 1));
        assert_ne!(epoch_order(&m, Split::Train, 3, 1), epoch_order(&m, Split::Train, 3, 2));
        assert_ne!(epoch_order(&m, Split::Train, 3, 1), epoch_order(&m, Split::Train, 4, 1));
        let mut sorted = epoch_order(&m, Split::Train, 3, 1);
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn empty_split_and_zero_batch_are_errors() {
        let m = black_set(5);
        let mut loader = ImageLoader::new(None, 4);
        assert!(batches(&m, Split::Test, 2, 0, 0, &mut loader).is_err());
        assert!(batches(&m, Split::Train, 0, 0, 0, &mut loader).is_err());
    }
}
