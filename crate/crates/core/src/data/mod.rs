//! Dataset acquisition, synthesis, on-disk layout and batch iteration.

pub mod build;
pub mod loader;
pub mod mnist;
pub mod morph;
pub mod pngio;
pub mod raster;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use build::{build_dataset, foreground_stats, BuildOptions, DatasetManifest, ForegroundStats};
pub use loader::{Batch, MaskAudit, MaskPolicy, SplitData};
pub use mnist::MnistSource;
pub use morph::{synthesize_mnist_thin, SkeletonSource, ThinParams};
pub use raster::{derive_mask, sample_bsds_patch, synthesize_mnist_m, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    MnistM,
    MnistThin,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [DatasetName::Mnist, DatasetName::MnistM, DatasetName::MnistThin];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::MnistM => "mnist_m",
            DatasetName::MnistThin => "mnist_thin",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which side of the adaptation problem a sample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainLabel {
    Source,
    Target,
}

impl DomainLabel {
    pub fn index(self) -> usize {
        match self {
            DomainLabel::Source => 0,
            DomainLabel::Target => 1,
        }
    }

    pub fn one_hot(self) -> [f32; 2] {
        let mut v = [0.0; 2];
        v[self.index()] = 1.0;
        v
    }

    pub fn other(self) -> DomainLabel {
        match self {
            DomainLabel::Source => DomainLabel::Target,
            DomainLabel::Target => DomainLabel::Source,
        }
    }
}

/// A single image/mask pair.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Raster,
    pub mask: Raster,
    pub digit_class: u8,
    pub domain: DomainLabel,
}

impl Sample {
    pub fn new(image: Raster, mask: Raster, digit_class: u8, domain: DomainLabel) -> Result<Self> {
        if image.height != mask.height || image.width != mask.width || mask.channels != 1 {
            return Err(Error::Dimension(format!(
                "image {}x{} with mask {}x{}x{}",
                image.height, image.width, mask.channels, mask.height, mask.width
            )));
        }
        if mask.data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("mask values must be 0 or 1".into()));
        }
        Ok(Sample {
            image,
            mask,
            digit_class,
            domain,
        })
    }
}

/// MNIST digits of one split at native 28x28 with masks thresholded at
/// `threshold`.
pub fn load_mnist(source: &MnistSource, split: Split, threshold: f32) -> Result<Vec<Sample>> {
    source
        .load(split)?
        .into_iter()
        .map(|d| {
            let mask = derive_mask(&d.image, threshold);
            Sample::new(d.image, mask, d.label, DomainLabel::Source)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_has_single_one() {
        assert_eq!(DomainLabel::Source.one_hot(), [1.0, 0.0]);
        assert_eq!(DomainLabel::Target.one_hot(), [0.0, 1.0]);
        assert_eq!(DomainLabel::Source.other(), DomainLabel::Target);
    }

    #[test]
    fn names_round_trip() {
        for n in DatasetName::ALL {
            assert_eq!(n.as_str().parse::<DatasetName>().unwrap(), n);
        }
        assert!("svhn".parse::<DatasetName>().is_err());
    }

    #[test]
    fn sample_rejects_nonbinary_mask() {
        let im = Raster::filled(1, 2, 2, 0.3);
        assert!(Sample::new(im.clone(), Raster::filled(1, 2, 2, 0.5), 0, DomainLabel::Source).is_err());
        assert!(Sample::new(im.clone(), Raster::filled(1, 3, 2, 1.0), 0, DomainLabel::Source).is_err());
        assert!(Sample::new(im, Raster::filled(1, 2, 2, 1.0), 0, DomainLabel::Source).is_ok());
    }

    #[test]
    fn blank_mnist_image_gives_blank_mask() {
        let m = derive_mask(&Raster::filled(1, 28, 28, 0.0), 0.5);
        assert!(m.data.iter().all(|&v| v == 0.0));
    }
}
