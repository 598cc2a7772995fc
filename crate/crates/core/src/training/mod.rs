//! Training loops of every experiment with schedules, checkpoints, early
//! stopping and a JSON-lines step log.

pub mod config;
pub mod log;
pub mod models;
pub mod run;
pub mod schedule;
pub mod state;
pub mod steps;

pub use config::{DataSpec, DecayInterval, ExperimentConfig, Group, ModelSpec, OptimSpec};
pub use log::{read_log, LogRecord};
pub use models::Models;
pub use run::{RunOptions, Trainer};
pub use schedule::{early_stopper, lr_schedule, StopDecision};
pub use state::{checkpoint_load, checkpoint_save, TrainState};

use crate::error::{Error, Result};
use crate::variant::Variant;

fn expect(cfg: &ExperimentConfig, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("variant {} cannot be trained by {what}", cfg.variant)))
    }
}

/// Dispatch on the configured variant.
pub fn train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainState> {
    run::run(cfg, opts)
}

/// Source-only segmenter with the soft-IoU loss.
pub fn train_fcn(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainState> {
    expect(cfg, cfg.variant == Variant::Fcn, "train_fcn")?;
    run::run(cfg, opts)
}

/// Two generators and two least-squares critics.
pub fn train_cyclegan(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainState> {
    expect(cfg, cfg.variant == Variant::CycleganTranslate, "train_cyclegan")?;
    run::run(cfg, opts)
}

/// One label-conditioned generator against a Wasserstein critic with a
/// domain head.
pub fn train_stargan_translation(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainState> {
    expect(cfg, cfg.variant == Variant::StarganTranslate, "train_stargan_translation")?;
    run::run(cfg, opts)
}

/// Joint translation, segmentation and (optionally) feature matching.
/// Target-domain masks are never opened; an attempt aborts the run.
pub fn train_da(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainState> {
    expect(cfg, cfg.variant.is_domain_adaptation(), "train_da")?;
    run::run(cfg, opts)
}
