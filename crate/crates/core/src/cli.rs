//! Config-file plumbing behind the `condaseg` binary: typed configs for
//! every subcommand, dotted-path overrides, default config emission and
//! dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{build_dataset, BuildOptions, DatasetManifest, DatasetName, MnistSource, Split};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_segmenter, param_table, reference_networks, results_table, translation_gallery, SegReport,
};
use crate::training::config::{dataset_root, SMOKE_DATA_LIMIT};
use crate::training::run::{BEST_CHECKPOINT, LAST_CHECKPOINT};
use crate::training::{train, ExperimentConfig, RunOptions};
use crate::variant::Variant;

pub const EVAL_FILE: &str = "eval.json";
pub const GALLERY_FILE: &str = "gallery.png";
pub const DEFAULT_GALLERY_COUNT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Data,
    Train,
    Eval,
    Report,
    Translate,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Data => "data",
            Subcommand::Train => "train",
            Subcommand::Eval => "eval",
            Subcommand::Report => "report",
            Subcommand::Translate => "translate",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Invocation {
    pub subcommand: Subcommand,
    pub config_path: PathBuf,
    /// `dotted.key=value`; values parse as JSON, falling back to a string.
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// `train`: continue from `checkpoints/last.ckpt` in the output dir.
    pub resume: bool,
    /// `translate`: images per domain in the gallery.
    pub count: Option<usize>,
}

impl Invocation {
    pub fn new(subcommand: Subcommand, config_path: impl Into<PathBuf>) -> Self {
        Invocation {
            subcommand,
            config_path: config_path.into(),
            overrides: Vec::new(),
            seed: None,
            output_dir: None,
            resume: false,
            count: None,
        }
    }
}

/// `data` subcommand: build one dataset into the cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetName,
    pub mnist: MnistSource,
    #[serde(default)]
    pub build: BuildOptions,
    /// Cache root; falls back to `CONDASEG_DATA_ROOT`, then `data`.
    /// Non-reference resolutions go to `res<N>/` below it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// `report` subcommand: collect evaluated runs into the tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Output directories of evaluated runs, each holding `eval.json`.
    pub runs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    /// Also write the parameter table of the reference networks.
    #[serde(default = "yes")]
    pub params: bool,
}

fn yes() -> bool {
    true
}

/// Set `dotted.path` inside `root`. Every segment must already exist, so a
/// typo is reported instead of silently adding a field.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = &mut *root;
    for segment in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(segment),
            Value::Array(items) => segment.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown configuration key `{key}`")))?;
    }
    *slot = value;
    Ok(())
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("config file {} does not exist", path.display())),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn typed<T: DeserializeOwned>(value: Value, origin: &Path) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", origin.display())))
}

/// Parse `path` as `T`, then apply the overrides to the fully populated
/// config (so defaulted fields can be overridden too) and parse again.
pub fn load_config<T: Serialize + DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<T> {
    let parsed: T = typed(read_json(path)?, path)?;
    if overrides.is_empty() {
        return Ok(parsed);
    }
    let mut value = serde_json::to_value(&parsed).map_err(|e| Error::Runtime(e.to_string()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    typed(value, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Runtime(e.to_string()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Dataset build configs for the three datasets, full size at 64 px and a
/// reduced 32 px build for the smoke runs.
pub fn default_data_configs() -> Vec<(String, DataConfig)> {
    let mnist = MnistSource {
        dir: PathBuf::from("data/raw/mnist"),
        verify_checksums: true,
        download: true,
    };
    let mut out = Vec::new();
    for name in DatasetName::ALL {
        out.push((
            format!("data_{}", name.as_str()),
            DataConfig {
                dataset: name,
                mnist: mnist.clone(),
                build: BuildOptions::default(),
                output_dir: None,
            },
        ));
        let smoke = ExperimentConfig::smoke(Variant::Fcn).data;
        out.push((
            format!("smoke_data_{}", name.as_str()),
            DataConfig {
                dataset: name,
                mnist: mnist.clone(),
                build: BuildOptions {
                    resolution: smoke.resolution,
                    limit: Some(SMOKE_DATA_LIMIT),
                    ..BuildOptions::default()
                },
                output_dir: None,
            },
        ));
    }
    out
}

/// Training configs: the reference and smoke config of every variant,
/// plus the baseline trained directly on the target domain.
pub fn default_experiment_configs() -> Vec<(String, ExperimentConfig)> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        out.push((v.as_str().to_string(), ExperimentConfig::reference(v)));
        out.push((format!("smoke_{}", v.as_str()), ExperimentConfig::smoke(v)));
    }
    let mut on_target = ExperimentConfig::reference(Variant::Fcn);
    on_target.source = DatasetName::MnistM;
    on_target.target = Some(DatasetName::MnistM);
    on_target.output_dir = PathBuf::from("runs/fcn_mnist_m");
    out.push(("fcn_mnist_m".into(), on_target));
    out
}

/// Write every default config as `<name>.json` into `dir`.
pub fn emit_default_configs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut emit = |name: &str, value: &dyn erased::Json| -> Result<()> {
        let path = dir.join(format!("{name}.json"));
        write_text(&path, &value.json()?)?;
        written.push(path);
        Ok(())
    };
    for (name, cfg) in default_experiment_configs() {
        emit(&name, &cfg)?;
    }
    for (name, cfg) in default_data_configs() {
        emit(&name, &cfg)?;
    }
    let runs = |prefix: &str| {
        Variant::SEGMENTATION
            .iter()
            .map(|v| PathBuf::from("runs").join(format!("{prefix}{}", v.as_str())))
            .collect()
    };
    emit(
        "report",
        &ReportConfig {
            runs: runs(""),
            output_dir: PathBuf::from("runs/report"),
            params: true,
        },
    )?;
    emit(
        "smoke_report",
        &ReportConfig {
            runs: runs("smoke_"),
            output_dir: PathBuf::from("runs/smoke_report"),
            params: true,
        },
    )?;
    Ok(written)
}

mod erased {
    use super::*;

    /// Pretty JSON of any config, for writing a heterogeneous list.
    pub trait Json {
        fn json(&self) -> Result<String>;
    }

    impl<T: Serialize> Json for T {
        fn json(&self) -> Result<String> {
            serde_json::to_string_pretty(self)
                .map(|s| s + "\n")
                .map_err(|e| Error::Runtime(e.to_string()))
        }
    }
}

fn experiment(inv: &Invocation) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = load_config(&inv.config_path, &inv.overrides)?;
    if let Some(seed) = inv.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &inv.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_dir(cfg: &ExperimentConfig, name: DatasetName, split: Split) -> PathBuf {
    DatasetManifest::split_dir(&cfg.data.dataset_root(), name, split)
}

/// The best checkpoint when validation tracked one, otherwise the last.
pub fn final_checkpoint(out: &Path) -> Result<PathBuf> {
    [BEST_CHECKPOINT, LAST_CHECKPOINT]
        .iter()
        .map(|c| out.join(c))
        .find(|p| p.exists())
        .ok_or_else(|| Error::Checkpoint(format!("no checkpoint under {}", out.display())))
}

fn run_data(inv: &Invocation) -> Result<()> {
    let mut cfg: DataConfig = load_config(&inv.config_path, &inv.overrides)?;
    if let Some(seed) = inv.seed {
        cfg.build.seed = seed;
    }
    if let Some(dir) = &inv.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    let root = dataset_root(cfg.output_dir.as_deref(), cfg.build.resolution);
    for m in build_dataset(cfg.dataset, &cfg.mnist, &cfg.build, &root)? {
        println!("{} {}: {} samples, sha256 {}", m.name.as_str(), m.split.as_str(), m.count, m.checksum);
    }
    Ok(())
}

fn run_train(inv: &Invocation) -> Result<()> {
    let cfg = experiment(inv)?;
    let last = cfg.output_dir.join(LAST_CHECKPOINT);
    let opts = RunOptions {
        resume: (inv.resume && last.exists()).then_some(last),
        ..RunOptions::default()
    };
    let state = train(&cfg, &opts)?;
    println!(
        "{}: {} epochs, {} steps, best validation {}",
        cfg.variant,
        state.epoch,
        state.global_step,
        state.best_val_metric.map_or("n/a".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

/// Evaluate on the source and target test splits.
pub fn evaluate_run(cfg: &ExperimentConfig) -> Result<Vec<SegReport>> {
    let ckpt = final_checkpoint(&cfg.output_dir)?;
    let mut domains = vec![cfg.source];
    domains.extend(cfg.target.filter(|t| *t != cfg.source));
    domains
        .into_iter()
        .map(|name| evaluate_segmenter(&ckpt, &split_dir(cfg, name, Split::Test), cfg.variant))
        .collect()
}

fn run_eval(inv: &Invocation) -> Result<()> {
    let cfg = experiment(inv)?;
    let reports = evaluate_run(&cfg)?;
    for r in &reports {
        println!("{} on {}: mIoU {:.4}", cfg.variant, r.dataset.name.as_str(), r.miou);
    }
    write_json(&cfg.output_dir.join(EVAL_FILE), &reports)
}

fn run_report(inv: &Invocation) -> Result<()> {
    let mut cfg: ReportConfig = load_config(&inv.config_path, &inv.overrides)?;
    if let Some(dir) = &inv.output_dir {
        cfg.output_dir = dir.clone();
    }
    let mut reports = Vec::new();
    for run in &cfg.runs {
        let path = run.join(EVAL_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::MissingData(format!("{}: {e}; run `eval` first", path.display())))?;
        let mut r: Vec<SegReport> =
            serde_json::from_str(&text).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
        reports.append(&mut r);
    }
    let table = results_table(&reports)?;
    let out = &cfg.output_dir;
    write_text(&out.join("results.csv"), &table.to_csv())?;
    write_text(&out.join("results.txt"), &table.to_text())?;
    write_json(&out.join("results.json"), &table)?;
    print!("{}", table.to_text());
    if cfg.params {
        let nets = reference_networks()?;
        let refs: Vec<(&str, &dyn crate::nets::Network)> = nets.iter().map(|(n, b)| (n.as_str(), b.as_ref())).collect();
        let params = param_table(&refs);
        write_text(&out.join("params.csv"), &params.to_csv())?;
        write_text(&out.join("params.txt"), &params.to_text())?;
        write_json(&out.join("params.json"), &params)?;
        print!("{}", params.to_text());
    }
    Ok(())
}

fn run_translate(inv: &Invocation) -> Result<()> {
    let cfg = experiment(inv)?;
    let target = cfg
        .target
        .ok_or_else(|| Error::Config(format!("{} has no target domain to translate to", cfg.variant)))?;
    if cfg.variant == Variant::Fcn {
        return Err(Error::Config("the FCN baseline has no generator".into()));
    }
    let ckpt = cfg.output_dir.join(LAST_CHECKPOINT);
    let path = cfg.output_dir.join(GALLERY_FILE);
    translation_gallery(
        &ckpt,
        &split_dir(&cfg, cfg.source, Split::Test),
        &split_dir(&cfg, target, Split::Test),
        inv.count.unwrap_or(DEFAULT_GALLERY_COUNT),
        &path,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn run(inv: &Invocation) -> Result<()> {
    match inv.subcommand {
        Subcommand::Data => run_data(inv),
        Subcommand::Train => run_train(inv),
        Subcommand::Eval => run_eval(inv),
        Subcommand::Report => run_report(inv),
        Subcommand::Translate => run_translate(inv),
    }
}
