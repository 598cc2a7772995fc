//! MNIST acquisition: gzip IDX archives, md5 verification, optional download.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use md5::{Digest, Md5};

use super::raster::Raster;
use super::Split;
use crate::error::{Error, Result};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte.gz";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte.gz";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte.gz";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte.gz";

pub const MIRRORS: [&str; 2] = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
];

pub fn expected_md5(file: &str) -> Option<&'static str> {
    match file {
        TRAIN_IMAGES => Some("f68b3c2dcbeaaa9fbdd348bbdeb94873"),
        TRAIN_LABELS => Some("d53e105ee54ea40749a09fcbcd1e9432"),
        TEST_IMAGES => Some("9fb629c4189551a2d022fa330f9573f3"),
        TEST_LABELS => Some("ec29112dd5afa0611ce80d1b7f02629c"),
        _ => None,
    }
}

/// Where the raw archives live and how strictly to treat them.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSource {
    pub dir: PathBuf,
    /// Reject archives whose md5 differs from the official release.
    /// Disable only for reduced stand-in archives.
    #[serde(default = "yes")]
    pub verify_checksums: bool,
    #[serde(default)]
    pub download: bool,
}

fn yes() -> bool {
    true
}

/// One digit at native resolution.
#[derive(Clone, Debug)]
pub struct Digit {
    pub image: Raster,
    pub label: u8,
}

impl MnistSource {
    fn archive(&self, file: &str) -> Result<Vec<u8>> {
        let path = self.dir.join(file);
        if !path.exists() {
            if !self.download {
                return Err(Error::Acquisition {
                    what: file.into(),
                    detail: format!("{} not found and downloading is disabled", path.display()),
                });
            }
            download(file, &path)?;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if self.verify_checksums {
            let got = hex::encode(Md5::digest(&bytes));
            let want = expected_md5(file).unwrap_or_default();
            if got != want {
                return Err(Error::Acquisition {
                    what: file.into(),
                    detail: format!("checksum mismatch: md5 {got}, expected {want}"),
                });
            }
        }
        Ok(bytes)
    }

    fn read_file_pair(&self, images: &str, labels: &str) -> Result<Vec<Digit>> {
        let (count, rows, cols, pixels) = parse_idx_images(&gunzip(&self.archive(images)?, images)?, images)?;
        let labels_raw = parse_idx_labels(&gunzip(&self.archive(labels)?, labels)?, labels)?;
        if labels_raw.len() != count {
            return Err(Error::Acquisition {
                what: labels.into(),
                detail: format!("{} labels for {count} images", labels_raw.len()),
            });
        }
        let n = rows * cols;
        (0..count)
            .map(|i| {
                Ok(Digit {
                    image: Raster::from_u8(1, rows, cols, &pixels[i * n..(i + 1) * n])?,
                    label: labels_raw[i],
                })
            })
            .collect()
    }

    /// Digits of one split. `train` and `val` partition the official training
    /// file 5:1 in file order (50,000 / 10,000 for the full release); `test`
    /// is the official test file.
    pub fn load(&self, split: Split) -> Result<Vec<Digit>> {
        match split {
            Split::Test => self.read_file_pair(TEST_IMAGES, TEST_LABELS),
            Split::Train | Split::Val => {
                let mut all = self.read_file_pair(TRAIN_IMAGES, TRAIN_LABELS)?;
                let cut = train_count(all.len());
                Ok(if split == Split::Train {
                    all.truncate(cut);
                    all
                } else {
                    all.split_off(cut)
                })
            }
        }
    }
}

/// Size of the training part of a training file with `total` digits.
pub fn train_count(total: usize) -> usize {
    total * 5 / 6
}

fn gunzip(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes).read_to_end(&mut out).map_err(|e| Error::Acquisition {
        what: what.into(),
        detail: format!("corrupt gzip stream: {e}"),
    })?;
    Ok(out)
}

fn be_u32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as usize
}

fn corrupt(what: &str, detail: &str) -> Error {
    Error::Acquisition {
        what: what.into(),
        detail: detail.into(),
    }
}

pub fn parse_idx_images(b: &[u8], what: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    if b.len() < 16 || be_u32(b, 0) != 0x0803 {
        return Err(corrupt(what, "bad IDX image header"));
    }
    let (n, r, c) = (be_u32(b, 4), be_u32(b, 8), be_u32(b, 12));
    if b.len() != 16 + n * r * c {
        return Err(corrupt(what, "IDX image payload length mismatch"));
    }
    Ok((n, r, c, b[16..].to_vec()))
}

pub fn parse_idx_labels(b: &[u8], what: &str) -> Result<Vec<u8>> {
    if b.len() < 8 || be_u32(b, 0) != 0x0801 {
        return Err(corrupt(what, "bad IDX label header"));
    }
    let n = be_u32(b, 4);
    if b.len() != 8 + n {
        return Err(corrupt(what, "IDX label payload length mismatch"));
    }
    Ok(b[8..].to_vec())
}

fn download(file: &str, dest: &Path) -> Result<()> {
    let mut last = String::new();
    for mirror in MIRRORS {
        let url = format!("{mirror}{file}");
        match ureq::get(&url).call() {
            Ok(mut resp) => {
                let bytes = resp
                    .body_mut()
                    .with_config()
                    .limit(64 << 20)
                    .read_to_vec()
                    .map_err(|e| corrupt(file, &format!("{url}: {e}")))?;
                if let Some(parent) = dest.parent() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                let tmp = dest.with_extension("part");
                fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
                fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))?;
                return Ok(());
            }
            Err(e) => last = format!("{url}: {e}"),
        }
    }
    Err(Error::Acquisition {
        what: file.into(),
        detail: format!("all mirrors failed, last error {last}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mnist_subset")
    }

    #[test]
    fn subset_loads_with_expected_split_sizes() {
        let src = MnistSource {
            dir: fixture(),
            verify_checksums: false,
            download: false,
        };
        let train = src.load(Split::Train).unwrap();
        let val = src.load(Split::Val).unwrap();
        let test = src.load(Split::Test).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (3333, 667, 1000));
        assert_eq!((train[0].image.height, train[0].image.width), (28, 28));
        assert!(train.iter().all(|d| d.label < 10));
        assert!(train[0].image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn full_release_split_sizes() {
        assert_eq!(train_count(60_000), 50_000);
        assert_eq!(60_000 - train_count(60_000), 10_000);
    }

    #[test]
    fn subset_fails_official_checksum() {
        let src = MnistSource {
            dir: fixture(),
            verify_checksums: true,
            download: false,
        };
        let err = src.load(Split::Test).unwrap_err();
        assert!(err.to_string().contains("checksum mismatch"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn missing_archive_is_an_acquisition_error() {
        let src = MnistSource {
            dir: PathBuf::from("/nonexistent/mnist"),
            verify_checksums: true,
            download: false,
        };
        assert!(matches!(src.load(Split::Train), Err(Error::Acquisition { .. })));
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(parse_idx_images(&[0; 16], "x").is_err());
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 2, 7], "x").is_err());
        assert_eq!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 2, 7, 3], "x").unwrap(), vec![7, 3]);
    }
}
