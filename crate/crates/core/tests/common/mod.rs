#![allow(dead_code)]

pub mod gradchecks;
pub mod oracles;

use std::path::{Path, PathBuf};

use condaseg::data::{build_dataset, BuildOptions, DatasetManifest, DatasetName, MnistSource};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mnist_subset")
}

pub fn subset_source() -> MnistSource {
    MnistSource {
        dir: fixture_dir(),
        verify_checksums: false,
        download: false,
    }
}

pub fn small_options(resolution: usize, limit: usize) -> BuildOptions {
    BuildOptions {
        resolution,
        limit: Some(limit),
        ..BuildOptions::default()
    }
}

pub fn build(root: &Path, name: DatasetName, opts: &BuildOptions) -> Vec<DatasetManifest> {
    build_dataset(name, &subset_source(), opts, root).expect("dataset build")
}

pub const SMOKE_RESOLUTION: usize = 32;

/// Cache root holding all three datasets at the smoke resolution, built
/// once per test binary.
pub fn smoke_data_root() -> PathBuf {
    static ROOT: std::sync::OnceLock<PathBuf> = std::sync::OnceLock::new();
    ROOT.get_or_init(|| {
        let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("smoke_data");
        let opts = small_options(SMOKE_RESOLUTION, condaseg::training::config::SMOKE_DATA_LIMIT);
        let res = condaseg::training::config::dataset_root(Some(&root), SMOKE_RESOLUTION);
        for name in DatasetName::ALL {
            build(&res, name, &opts);
        }
        root
    })
    .clone()
}

/// Smoke configuration shrunk to a handful of steps, writing to `out`.
pub fn tiny_config(variant: condaseg::Variant, out: &Path) -> condaseg::training::ExperimentConfig {
    let mut cfg = condaseg::training::ExperimentConfig::smoke(variant);
    cfg.data.root = Some(smoke_data_root());
    cfg.data.train_limit = Some(24);
    cfg.data.val_limit = Some(8);
    cfg.max_epochs = 1;
    cfg.patience = 1;
    cfg.sample_count = 4;
    cfg.output_dir = out.to_path_buf();
    cfg
}
