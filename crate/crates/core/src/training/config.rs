//! Declarative experiment configuration and its reference values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::losses::LambdaSet;
use crate::variant::Variant;

/// Environment variable naming the dataset cache root.
pub const DATA_ROOT_ENV: &str = "CONDASEG_DATA_ROOT";
pub const DEFAULT_DATA_ROOT: &str = "data";
/// Images per split in the smoke dataset builds.
pub const SMOKE_DATA_LIMIT: usize = 256;
pub const REFERENCE_RESOLUTION: usize = 64;

/// Networks that share one optimizer configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Segmenter,
    Generator,
    Discriminator,
    FeatureCritic,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Segmenter => "segmenter",
            Group::Generator => "generator",
            Group::Discriminator => "discriminator",
            Group::FeatureCritic => "feature_critic",
        }
    }

    /// Groups a variant trains.
    pub fn required(variant: Variant) -> Vec<Group> {
        match variant {
            Variant::Fcn => vec![Group::Segmenter],
            Variant::CycleganTranslate | Variant::StarganTranslate => vec![Group::Generator, Group::Discriminator],
            Variant::SganS => vec![Group::Generator, Group::Segmenter, Group::Discriminator],
            Variant::Uncond | Variant::InCond | Variant::OutCond => vec![
                Group::Generator,
                Group::Segmenter,
                Group::Discriminator,
                Group::FeatureCritic,
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayInterval {
    PerEpoch,
    PerNIterations(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSpec {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub decay_factor: f32,
    pub decay_interval: DecayInterval,
}

impl OptimSpec {
    pub fn adam(learning_rate: f32, beta1: f32, beta2: f32) -> Self {
        OptimSpec {
            learning_rate,
            beta1,
            beta2,
            decay_factor: 1.0,
            decay_interval: DecayInterval::PerEpoch,
        }
    }

    pub fn decayed(self, decay_factor: f32, decay_interval: DecayInterval) -> Self {
        OptimSpec {
            decay_factor,
            decay_interval,
            ..self
        }
    }

    pub fn validate(&self, group: &str) -> Result<()> {
        let bad = |what: String| Err(Error::Config(format!("optimizers.{group}.{what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_interval == DecayInterval::PerNIterations(0) {
            return bad("decay_interval.per_n_iterations must be at least 1".into());
        }
        Ok(())
    }
}

/// Where the built datasets live and how much of them to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Dataset cache root; falls back to `$CONDASEG_DATA_ROOT`, then `data`.
    pub root: Option<PathBuf>,
    pub resolution: usize,
    /// Use only the first `n` training samples of each domain.
    pub train_limit: Option<usize>,
    /// Use only the first `n` validation samples.
    pub val_limit: Option<usize>,
}

impl DataSpec {
    pub fn reference() -> Self {
        DataSpec {
            root: None,
            resolution: REFERENCE_RESOLUTION,
            train_limit: None,
            val_limit: None,
        }
    }

    /// Directory holding `<dataset>/<split>` for this resolution.
    pub fn dataset_root(&self) -> PathBuf {
        dataset_root(self.root.as_deref(), self.resolution)
    }
}

/// Datasets at the reference resolution live directly under the cache
/// root; other resolutions under `res<N>/`.
pub fn dataset_root(root: Option<&Path>, resolution: usize) -> PathBuf {
    let base = root.map(Path::to_path_buf).unwrap_or_else(|| {
        std::env::var_os(DATA_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_ROOT))
    });
    if resolution == REFERENCE_RESOLUTION {
        base
    } else {
        base.join(format!("res{resolution}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub base_channels: usize,
    pub dropout: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub source: DatasetName,
    /// Second domain; unused by the FCN baseline's training.
    pub target: Option<DatasetName>,
    pub lambdas: LambdaSet,
    pub optimizers: BTreeMap<Group, OptimSpec>,
    pub batch_size: usize,
    pub max_epochs: u64,
    /// Stop after this many iterations even mid-epoch.
    pub max_iterations: Option<u64>,
    pub patience: u64,
    pub d_steps_per_g_step: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSpec,
    pub model: ModelSpec,
    /// Images per row of the sample grid written after every epoch; 0
    /// disables the grids.
    pub sample_count: usize,
}

impl ExperimentConfig {
    /// The configuration of the published experiment.
    pub fn reference(variant: Variant) -> Self {
        let da_opt = OptimSpec::adam(1e-4, 0.5, 0.999).decayed(0.995, DecayInterval::PerNIterations(1500));
        let optimizers = |spec: OptimSpec| Group::required(variant).into_iter().map(|g| (g, spec)).collect();
        let base = ExperimentConfig {
            variant,
            source: DatasetName::MnistThin,
            target: Some(DatasetName::MnistM),
            lambdas: LambdaSet::for_variant(variant),
            optimizers: optimizers(da_opt),
            batch_size: 32,
            max_epochs: 500,
            max_iterations: None,
            patience: 50,
            d_steps_per_g_step: 5,
            seed: 0,
            output_dir: PathBuf::from("runs").join(variant.as_str()),
            data: DataSpec::reference(),
            model: ModelSpec {
                base_channels: 32,
                dropout: 0.2,
            },
            sample_count: 8,
        };
        match variant {
            Variant::Fcn => ExperimentConfig {
                optimizers: optimizers(OptimSpec::adam(1e-3, 0.9, 0.999).decayed(0.995, DecayInterval::PerEpoch)),
                d_steps_per_g_step: 1,
                ..base
            },
            Variant::CycleganTranslate => ExperimentConfig {
                source: DatasetName::Mnist,
                optimizers: optimizers(OptimSpec::adam(2e-4, 0.5, 0.999)),
                max_epochs: 200,
                patience: 200,
                d_steps_per_g_step: 1,
                model: ModelSpec {
                    dropout: 0.0,
                    ..base.model
                },
                ..base
            },
            Variant::StarganTranslate => ExperimentConfig {
                source: DatasetName::Mnist,
                optimizers: optimizers(OptimSpec::adam(1e-4, 0.5, 0.999)),
                max_epochs: 200,
                max_iterations: Some(200_000),
                patience: 200,
                model: ModelSpec {
                    dropout: 0.0,
                    ..base.model
                },
                ..base
            },
            _ => base,
        }
    }

    /// A reduced copy that finishes in minutes on one CPU core. The
    /// translation-only StarGAN gets more data, width and epochs: with 8
    /// channels its domain head loses the shared trunk to the adversarial
    /// term and never settles.
    pub fn smoke(variant: Variant) -> Self {
        let reference = Self::reference(variant);
        let (max_epochs, train_limit, base_channels) = match variant {
            Variant::StarganTranslate => (15, SMOKE_DATA_LIMIT, 16),
            Variant::CycleganTranslate => (4, 96, 8),
            _ => (3, 96, 8),
        };
        ExperimentConfig {
            batch_size: 8,
            max_epochs,
            max_iterations: None,
            patience: max_epochs,
            output_dir: PathBuf::from("runs").join(format!("smoke_{}", variant.as_str())),
            data: DataSpec {
                root: None,
                resolution: 32,
                train_limit: Some(train_limit),
                val_limit: Some(32),
            },
            model: ModelSpec {
                base_channels,
                ..reference.model
            },
            ..reference
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.lambdas.validate()?;
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs < 1 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience ({}) must not exceed max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if self.d_steps_per_g_step < 1 {
            return bad("d_steps_per_g_step must be at least 1".into());
        }
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be at least 1 when set".into());
        }
        if self.variant != Variant::Fcn {
            match self.target {
                None => return bad(format!("variant {} needs a target dataset", self.variant)),
                Some(t) if t == self.source => return bad("source and target datasets must differ".into()),
                _ => {}
            }
        }
        let r = self.data.resolution;
        if r < 16 || !r.is_multiple_of(16) {
            return bad(format!("data.resolution must be a positive multiple of 16, got {r}"));
        }
        if self.model.base_channels < 1 {
            return bad("model.base_channels must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return bad(format!("model.dropout must lie in [0, 1), got {}", self.model.dropout));
        }
        if self.data.train_limit == Some(0) || self.data.val_limit == Some(0) {
            return bad("data limits must be at least 1 when set".into());
        }
        for g in Group::required(self.variant) {
            self.optimizers
                .get(&g)
                .ok_or_else(|| Error::Config(format!("optimizers.{} is required for {}", g.as_str(), self.variant)))?
                .validate(g.as_str())?;
        }
        if let Some(extra) = self.optimizers.keys().find(|g| !Group::required(self.variant).contains(g)) {
            return bad(format!("optimizers.{} is not used by {}", extra.as_str(), self.variant));
        }
        Ok(())
    }

    pub fn optimizer(&self, group: Group) -> Result<OptimSpec> {
        self.optimizers
            .get(&group)
            .copied()
            .ok_or_else(|| Error::Config(format!("optimizers.{} missing", group.as_str())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
