//! In-memory view of a built split, audited mask access, and deterministic
//! shuffled batching.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use autograd::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::build::{read_records, DatasetManifest, ManifestRecord};
use super::pngio;
use crate::error::{Error, Result};
use crate::seeds;

/// Channels every model consumes; grayscale sets are replicated.
pub const MODEL_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    Allowed,
    /// Any attempt to read a mask is logged and fails.
    Forbidden,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskAccess {
    pub tag: String,
    pub file: String,
    pub permitted: bool,
}

/// Shared log of every mask file read attempt.
#[derive(Clone, Debug, Default)]
pub struct MaskAudit(Arc<Mutex<Vec<MaskAccess>>>);

impl MaskAudit {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, access: MaskAccess) {
        self.0.lock().expect("mask audit lock poisoned").push(access);
    }

    pub fn records(&self) -> Vec<MaskAccess> {
        self.0.lock().expect("mask audit lock poisoned").clone()
    }

    pub fn reads_tagged(&self, tag: &str) -> usize {
        self.records().iter().filter(|a| a.tag == tag).count()
    }
}

/// A built split held in memory as 8-bit pixels.
pub struct SplitData {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
    records: Vec<ManifestRecord>,
    channels: usize,
    height: usize,
    width: usize,
    images: Vec<u8>,
    masks: OnceLock<Vec<u8>>,
    policy: MaskPolicy,
    tag: String,
    audit: MaskAudit,
}

/// Images in the model range [-1,1], `[B,3,H,W]`; masks in {0,1},
/// `[B,1,H,W]` when requested.
#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub masks: Option<Tensor>,
}

impl SplitData {
    /// Load every image of the split at `dir`. Masks are read lazily and
    /// each read is recorded in `audit` under `tag`.
    pub fn open(dir: &Path, policy: MaskPolicy, tag: &str, audit: &MaskAudit) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let records = read_records(dir)?;
        if records.len() != manifest.count {
            return Err(Error::MissingData(format!(
                "{}: manifest lists {} records, summary says {}",
                dir.display(),
                records.len(),
                manifest.count
            )));
        }
        let mut images = Vec::new();
        let (mut channels, mut height, mut width) = (0, manifest.resolution, manifest.resolution);
        for r in &records {
            let im = pngio::read(&dir.join(&r.image))?;
            if channels == 0 {
                (channels, height, width) = (im.channels, im.height, im.width);
            } else if (im.channels, im.height, im.width) != (channels, height, width) {
                return Err(Error::Dimension(format!("{} differs in shape", r.image)));
            }
            images.extend(im.to_u8());
        }
        Ok(SplitData {
            manifest,
            dir: dir.to_path_buf(),
            records,
            channels: channels.max(1),
            height,
            width,
            images,
            masks: OnceLock::new(),
            policy,
            tag: tag.to_string(),
            audit: audit.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn digit_class(&self, i: usize) -> u8 {
        self.records[i].digit_class
    }

    fn load_masks(&self) -> Result<&Vec<u8>> {
        if let Some(m) = self.masks.get() {
            return Ok(m);
        }
        let permitted = self.policy == MaskPolicy::Allowed;
        let mut out = Vec::with_capacity(self.len() * self.height * self.width);
        for r in &self.records {
            self.audit.push(MaskAccess {
                tag: self.tag.clone(),
                file: self.dir.join(&r.mask).display().to_string(),
                permitted,
            });
            if !permitted {
                return Err(Error::Leakage(format!(
                    "mask {} of '{}' requested",
                    r.mask, self.tag
                )));
            }
            out.extend(pngio::read(&self.dir.join(&r.mask))?.to_u8());
        }
        Ok(self.masks.get_or_init(|| out))
    }

    pub fn images(&self, indices: &[usize]) -> Result<Tensor> {
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let per = self.channels * plane;
        let mut data = Vec::with_capacity(indices.len() * MODEL_CHANNELS * plane);
        for &i in indices {
            let src = self
                .images
                .get(i * per..(i + 1) * per)
                .ok_or_else(|| Error::InvalidArgument(format!("sample {i} out of range")))?;
            for c in 0..MODEL_CHANNELS {
                let sc = if self.channels == 1 { 0 } else { c };
                data.extend(src[sc * plane..(sc + 1) * plane].iter().map(|&b| b as f32 / 127.5 - 1.0));
            }
        }
        Ok(Tensor::new(vec![indices.len(), MODEL_CHANNELS, h, w], data)?)
    }

    pub fn masks(&self, indices: &[usize]) -> Result<Tensor> {
        let all = self.load_masks()?;
        let plane = self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * plane);
        for &i in indices {
            let src = all
                .get(i * plane..(i + 1) * plane)
                .ok_or_else(|| Error::InvalidArgument(format!("sample {i} out of range")))?;
            data.extend(src.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }));
        }
        Ok(Tensor::new(vec![indices.len(), 1, self.height, self.width], data)?)
    }

    pub fn batch(&self, indices: &[usize], with_masks: bool) -> Result<Batch> {
        Ok(Batch {
            indices: indices.to_vec(),
            images: self.images(indices)?,
            masks: if with_masks { Some(self.masks(indices)?) } else { None },
        })
    }
}

/// Sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeds::stream(seed, &format!("data.shuffle.epoch.{epoch}"));
    order.shuffle(&mut rng);
    order
}

/// Index chunks of one epoch: `ceil(n / batch_size)` batches, the last one
/// possibly short.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 1 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    Ok(epoch_order(n, seed, epoch)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Shuffled batches over one epoch of `data`.
pub fn batch_iterator<'a>(
    data: &'a SplitData,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
    with_masks: bool,
) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let chunks = epoch_batches(data.len(), batch_size, shuffle_seed, epoch)?;
    Ok(chunks.into_iter().map(move |idx| data.batch(&idx, with_masks)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn batch_sizes_cover_the_count() {
        let b = epoch_batches(10, 4, 0, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert!(epoch_batches(10, 0, 0, 0).is_err());
    }

    #[test]
    fn order_depends_on_seed_and_epoch_only() {
        assert_eq!(epoch_order(50, 3, 1), epoch_order(50, 3, 1));
        assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 3, 2));
        assert_ne!(epoch_order(50, 3, 1), epoch_order(50, 4, 1));
    }

    proptest! {
        #[test]
        fn each_epoch_is_a_partition(n in 1usize..200, bs in 1usize..40, seed in any::<u64>(), epoch in 0u64..5) {
            let batches = epoch_batches(n, bs, seed, epoch).unwrap();
            prop_assert_eq!(batches.len(), n.div_ceil(bs));
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
