//! Writing datasets to disk: one PNG per image and mask, a JSON-lines
//! manifest per split, and a summary record used for idempotent rebuilds.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mnist::MnistSource;
use super::morph::{synthesize_mnist_thin, ThinParams};
use super::raster::{derive_mask, procedural_texture, resize_bilinear, sample_bsds_patch, synthesize_mnist_m, Raster};
use super::{pngio, DatasetName, Split};
use crate::error::{Error, Result};
use crate::seeds;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildOptions {
    pub resolution: usize,
    pub seed: u64,
    pub mask_threshold: f32,
    pub thin: ThinParams,
    /// Directory searched (recursively) for natural texture images.
    pub texture_dir: Option<PathBuf>,
    /// Substitute seeded procedural noise when no texture images are found.
    pub allow_procedural_texture: bool,
    /// Keep only the first `limit` digits of every split.
    pub limit: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            resolution: 64,
            seed: 0,
            mask_threshold: 0.4,
            thin: ThinParams::default(),
            texture_dir: None,
            allow_procedural_texture: true,
            limit: None,
        }
    }
}

/// Everything that determines the bytes of a split besides the MNIST
/// archives themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub mask_threshold: f32,
    pub thin: Option<ThinParams>,
    pub limit: Option<usize>,
    pub texture: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: DatasetName,
    pub split: Split,
    pub count: usize,
    pub resolution: usize,
    /// SHA-256 of the split's `manifest.jsonl`, which lists the SHA-256 of
    /// every file.
    pub checksum: String,
    pub generator_seed: u64,
    pub non_paper_texture: bool,
    pub recipe: Recipe,
}

impl DatasetManifest {
    pub fn split_dir(root: &Path, name: DatasetName, split: Split) -> PathBuf {
        root.join(name.as_str()).join(split.as_str())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingData(format!("{} has not been built", dir.display()))
            } else {
                Error::io(&path, e)
            }
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: usize,
    pub digit_class: u8,
    pub image: String,
    pub mask: String,
    pub image_sha256: String,
    pub mask_sha256: String,
}

pub fn read_records(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

enum Texture {
    Natural(Vec<Raster>),
    Procedural,
}

fn find_images(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            find_images(&path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("jpg" | "jpeg" | "png")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

fn texture_paths(opts: &BuildOptions) -> Vec<PathBuf> {
    let mut paths = Vec::new();
    if let Some(dir) = &opts.texture_dir {
        if dir.is_dir() {
            let _ = find_images(dir, &mut paths);
        }
    }
    paths.sort();
    paths
}

fn load_textures(paths: &[PathBuf]) -> Result<Vec<Raster>> {
    paths
        .iter()
        .map(|p| {
            let img = image::open(p)
                .map_err(|e| Error::Acquisition {
                    what: p.display().to_string(),
                    detail: e.to_string(),
                })?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let raw = img.into_raw();
            let n = w * h;
            let mut planar = vec![0u8; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    planar[c * n + i] = raw[i * 3 + c];
                }
            }
            Raster::from_u8(3, h, w, &planar)
        })
        .collect()
}

fn recipe(name: DatasetName, opts: &BuildOptions, natural: bool) -> Recipe {
    Recipe {
        mask_threshold: opts.mask_threshold,
        thin: (name == DatasetName::MnistThin).then_some(opts.thin),
        limit: opts.limit,
        texture: (name == DatasetName::MnistM).then(|| if natural { "natural" } else { "procedural" }.to_string()),
    }
}

fn up_to_date(dir: &Path, expected: &DatasetManifest) -> bool {
    let Ok(existing) = DatasetManifest::read(dir) else {
        return false;
    };
    let same_identity = existing.name == expected.name
        && existing.split == expected.split
        && existing.resolution == expected.resolution
        && existing.generator_seed == expected.generator_seed
        && existing.recipe == expected.recipe;
    same_identity
        && fs::read(dir.join(MANIFEST_FILE))
            .map(|b| sha256_hex(&b) == existing.checksum)
            .unwrap_or(false)
}

/// Clear a split directory before regenerating it, refusing to touch a
/// directory this module did not create.
fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let ours = dir.join(SUMMARY_FILE).exists() || dir.join(MANIFEST_FILE).exists();
        let empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_none();
        if !ours && !empty {
            return Err(Error::InvalidArgument(format!(
                "{} exists and is not a dataset directory",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// One synthesized image/mask pair from a native-resolution digit.
fn synthesize(
    name: DatasetName,
    digit: &Raster,
    opts: &BuildOptions,
    texture: &Texture,
    rng: &mut ChaCha8Rng,
) -> Result<(Raster, Raster)> {
    let r = opts.resolution;
    match name {
        DatasetName::Mnist => {
            let resized = resize_bilinear(digit, r, r);
            let mask = derive_mask(&resized, opts.mask_threshold);
            Ok((resized, mask))
        }
        DatasetName::MnistM => {
            let resized = resize_bilinear(digit, r, r);
            let mask = derive_mask(&resized, opts.mask_threshold);
            let patch = match texture {
                Texture::Natural(pool) => sample_bsds_patch(pool, r, rng)?,
                Texture::Procedural => procedural_texture(r, rng),
            };
            Ok((synthesize_mnist_m(&resized, &patch)?, mask))
        }
        DatasetName::MnistThin => {
            let mut thin = synthesize_mnist_thin(digit, &opts.thin);
            if thin.height != r {
                thin = derive_mask(&resize_bilinear(&thin, r, r), 0.5);
            }
            Ok((thin.clone(), thin))
        }
    }
}

/// Build (or confirm) one split of a dataset under `root`.
pub fn build_split(
    name: DatasetName,
    split: Split,
    source: &MnistSource,
    opts: &BuildOptions,
    root: &Path,
) -> Result<DatasetManifest> {
    let dir = DatasetManifest::split_dir(root, name, split);
    let paths = if name == DatasetName::MnistM { texture_paths(opts) } else { Vec::new() };
    if name == DatasetName::MnistM && paths.is_empty() && !opts.allow_procedural_texture {
        return Err(Error::MissingData(format!(
            "no texture images under {:?} and procedural texture is disabled",
            opts.texture_dir
        )));
    }
    let natural = !paths.is_empty();
    let mut manifest = DatasetManifest {
        name,
        split,
        count: 0,
        resolution: opts.resolution,
        checksum: String::new(),
        generator_seed: opts.seed,
        non_paper_texture: name == DatasetName::MnistM && !natural,
        recipe: recipe(name, opts, natural),
    };
    if up_to_date(&dir, &manifest) {
        return DatasetManifest::read(&dir);
    }

    let mut digits = source.load(split)?;
    if let Some(limit) = opts.limit {
        digits.truncate(limit);
    }
    let texture = if natural {
        Texture::Natural(load_textures(&paths)?)
    } else {
        Texture::Procedural
    };
    reset_dir(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::stream_seed(opts.seed, &format!("data.texture.{split}")));
    let mut lines = Vec::new();
    for (index, digit) in digits.iter().enumerate() {
        let (image, mask) = synthesize(name, &digit.image, opts, &texture, &mut rng)?;
        let image_file = format!("img_{index:06}.png");
        let mask_file = format!("mask_{index:06}.png");
        let image_bytes = pngio::write(&dir.join(&image_file), &image)?;
        let mask_bytes = pngio::write(&dir.join(&mask_file), &mask)?;
        let record = ManifestRecord {
            index,
            digit_class: digit.label,
            image: image_file,
            mask: mask_file,
            image_sha256: sha256_hex(&image_bytes),
            mask_sha256: sha256_hex(&mask_bytes),
        };
        lines.push(serde_json::to_string(&record)?);
    }
    let mut body = lines.join("\n");
    body.push('\n');
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, body.as_bytes()).map_err(|e| Error::io(&manifest_path, e))?;
    manifest.count = digits.len();
    manifest.checksum = sha256_hex(body.as_bytes());
    let summary = dir.join(SUMMARY_FILE);
    let mut f = fs::File::create(&summary).map_err(|e| Error::io(&summary, e))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())
        .map_err(|e| Error::io(&summary, e))?;
    Ok(manifest)
}

/// Build all three splits of `name`. Re-running with identical options is
/// a no-op that returns the existing manifests.
pub fn build_dataset(
    name: DatasetName,
    source: &MnistSource,
    opts: &BuildOptions,
    root: &Path,
) -> Result<Vec<DatasetManifest>> {
    if opts.resolution < 8 || !opts.resolution.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "resolution {} must be a multiple of 4 and at least 8",
            opts.resolution
        )));
    }
    Split::ALL
        .into_iter()
        .map(|split| build_split(name, split, source, opts, root))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForegroundStats {
    pub mean: f64,
    /// Per-sample foreground fraction counts in bins of `bin_width`; the
    /// last bin also takes everything above its lower edge.
    pub histogram: Vec<usize>,
    pub bin_width: f64,
    pub per_sample: Vec<f64>,
}

pub fn foreground_fraction_stats(fractions: Vec<f64>) -> ForegroundStats {
    const BINS: usize = 50;
    const WIDTH: f64 = 0.01;
    let mut histogram = vec![0; BINS];
    for &f in &fractions {
        histogram[((f / WIDTH) as usize).min(BINS - 1)] += 1;
    }
    let mean = if fractions.is_empty() {
        0.0
    } else {
        fractions.iter().sum::<f64>() / fractions.len() as f64
    };
    ForegroundStats {
        mean,
        histogram,
        bin_width: WIDTH,
        per_sample: fractions,
    }
}

/// Mean fraction of mask pixels that are foreground, over a built split.
pub fn foreground_stats(dir: &Path) -> Result<ForegroundStats> {
    DatasetManifest::read(dir)?;
    let fractions = read_records(dir)?
        .iter()
        .map(|r| Ok(pngio::read(&dir.join(&r.mask))?.foreground_fraction()))
        .collect::<Result<Vec<_>>>()?;
    Ok(foreground_fraction_stats(fractions))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_set_has_zero_foreground() {
        let s = foreground_fraction_stats(vec![0.0; 5]);
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.histogram[0], 5);
        assert_eq!(foreground_fraction_stats(vec![]).mean, 0.0);
    }

    #[test]
    fn histogram_clamps_large_fractions() {
        let s = foreground_fraction_stats(vec![0.145, 0.9]);
        assert_eq!(s.histogram[14], 1);
        assert_eq!(s.histogram[49], 1);
    }
}
