//! The epoch/batch loop shared by every variant: data streams, checkpoints,
//! validation, early stopping and logging.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use autograd::{gradients, no_grad, Adam, Var};
use serde::Serialize;

use super::config::{ExperimentConfig, Group, OptimSpec};
use super::log::{LogRecord, OutputLock, StepLog, VAL_PHASE};
use super::models::Models;
use super::schedule::{early_stopper, lr_schedule};
use super::state::{checkpoint_load, checkpoint_save, TrainState};
use super::steps;
use crate::data::build::DatasetManifest;
use crate::data::loader::{epoch_batches, Batch, MaskAccess, MaskAudit, MaskPolicy, SplitData};
use crate::data::{DatasetName, Split};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::nets::{archive, Mode};
use crate::seeds::{self, StreamRng};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const AUDIT_FILE: &str = "mask_audit.json";
pub const SAMPLES_DIR: &str = "samples";
pub const BEST_CHECKPOINT: &str = "checkpoints/best.ckpt";
pub const LAST_CHECKPOINT: &str = "checkpoints/last.ckpt";

/// Audit tags of the four splits a run may open.
pub mod tags {
    pub const SOURCE_TRAIN: &str = "source.train";
    pub const SOURCE_VAL: &str = "source.val";
    pub const TARGET_TRAIN: &str = "target.train";
    pub const TARGET_VAL: &str = "target.val";
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Continue from this checkpoint instead of starting fresh.
    pub resume: Option<PathBuf>,
    /// Save `last` and return once this many updates have been made.
    pub stop_at_step: Option<u64>,
    /// Receives every mask read; shared with the caller.
    pub audit: MaskAudit,
}

pub struct OptimGroup {
    pub spec: OptimSpec,
    pub params: Vec<Var>,
    pub adam: Adam,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Progress {
    pub epoch: u64,
    pub step_in_epoch: u64,
    pub global_step: u64,
    pub target_batches: u64,
    pub best_val_metric: Option<f64>,
    pub epochs_since_improvement: u64,
    pub val_history: Vec<f64>,
    pub finished: bool,
}

/// Networks, optimizers, random streams and counters of one run.
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub models: Models,
    pub groups: BTreeMap<Group, OptimGroup>,
    pub gp: StreamRng,
    gp_seed: u64,
    pub progress: Progress,
}

const GP_STREAM: &str = "gp";

impl Trainer {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let models = Models::build(cfg)?;
        let mut groups = BTreeMap::new();
        for g in Group::required(cfg.variant) {
            let spec = cfg.optimizer(g)?;
            let params = models.group_parameters(g);
            let adam = Adam::new(&params, spec.beta1, spec.beta2);
            groups.insert(g, OptimGroup { spec, params, adam });
        }
        models.set_mode(Mode::Train);
        let gp_seed = seeds::stream_seed(cfg.seed, GP_STREAM);
        Ok(Trainer {
            cfg: cfg.clone(),
            models,
            groups,
            gp: seeds::stream(cfg.seed, GP_STREAM),
            gp_seed,
            progress: Progress::default(),
        })
    }

    pub fn from_state(state: &TrainState) -> Result<Self> {
        let mut t = Trainer::new(&state.config)?;
        for (name, _, net) in t.models.networks() {
            let params = state
                .parameters
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no network '{name}'")))?;
            archive::restore(net, params)?;
            if let Some(&pos) = state.dropout.get(name) {
                net.restore_dropout(pos);
            }
        }
        for (g, opt) in &mut t.groups {
            let s = state
                .optimizers
                .get(g.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no optimizer '{}'", g.as_str())))?;
            opt.adam.load_state(s.clone())?;
        }
        if let Some(&pos) = state.rng.get(GP_STREAM) {
            t.gp_seed = pos.seed;
            t.gp = seeds::restore(pos);
        }
        t.progress = Progress {
            epoch: state.epoch,
            step_in_epoch: state.step_in_epoch,
            global_step: state.global_step,
            target_batches: state.target_batches,
            best_val_metric: state.best_val_metric,
            epochs_since_improvement: state.epochs_since_improvement,
            val_history: state.val_history.clone(),
            finished: state.finished,
        };
        Ok(t)
    }

    pub fn state(&self) -> TrainState {
        let nets = self.models.networks();
        let p = &self.progress;
        TrainState {
            config: self.cfg.clone(),
            epoch: p.epoch,
            step_in_epoch: p.step_in_epoch,
            global_step: p.global_step,
            target_batches: p.target_batches,
            best_val_metric: p.best_val_metric,
            epochs_since_improvement: p.epochs_since_improvement,
            val_history: p.val_history.clone(),
            finished: p.finished,
            rng: BTreeMap::from([(GP_STREAM.to_string(), seeds::position(self.gp_seed, &self.gp))]),
            dropout: nets.iter().map(|(n, _, net)| (n.to_string(), net.dropout_position())).collect(),
            parameters: nets
                .iter()
                .map(|(n, _, net)| (n.to_string(), archive::snapshot(*net)))
                .collect(),
            optimizers: self
                .groups
                .iter()
                .map(|(g, o)| (g.as_str().to_string(), o.adam.state().clone()))
                .collect(),
        }
    }

    /// Learning rate of `group` at the current step and epoch.
    pub fn lr(&self, group: Group) -> f32 {
        lr_schedule(&self.groups[&group].spec, self.progress.global_step, self.progress.epoch)
    }
}

/// One Adam step on every group in `which` from a single backward pass.
/// Returns the learning rate of the first group.
pub(crate) fn update(
    groups: &mut BTreeMap<Group, OptimGroup>,
    loss: &Var,
    which: &[Group],
    step: u64,
    epoch: u64,
) -> Result<f32> {
    let params: Vec<Var> = which.iter().flat_map(|g| groups[g].params.clone()).collect();
    let refs: Vec<&Var> = params.iter().collect();
    let mut grads = gradients(loss, &refs)?.into_iter();
    let mut first = None;
    for g in which {
        let opt = groups.get_mut(g).expect("group exists");
        let lr = lr_schedule(&opt.spec, step, epoch);
        first.get_or_insert(lr);
        let n = opt.params.len();
        let chunk: Vec<_> = grads.by_ref().take(n).collect();
        opt.adam.step(&opt.params, &chunk, lr)?;
    }
    Ok(first.unwrap_or(0.0))
}

/// The splits a run reads. Target splits are opened with masks forbidden.
pub struct Datasets {
    pub source_train: SplitData,
    pub source_val: SplitData,
    pub target_train: Option<SplitData>,
    pub target_val: Option<SplitData>,
    pub train_count: usize,
    pub target_count: usize,
    pub val_count: usize,
    pub target_val_count: usize,
}

pub fn open_split(
    root: &Path,
    name: DatasetName,
    split: Split,
    resolution: usize,
    policy: MaskPolicy,
    tag: &str,
    audit: &MaskAudit,
) -> Result<SplitData> {
    let dir = DatasetManifest::split_dir(root, name, split);
    let data = SplitData::open(&dir, policy, tag, audit)?;
    if data.resolution() != (resolution, resolution) {
        return Err(Error::MissingData(format!(
            "{} holds {:?} images, the configuration needs {resolution}x{resolution}",
            dir.display(),
            data.resolution()
        )));
    }
    if data.is_empty() {
        return Err(Error::MissingData(format!("{} is empty", dir.display())));
    }
    Ok(data)
}

impl Datasets {
    pub fn open(cfg: &ExperimentConfig, audit: &MaskAudit) -> Result<Self> {
        let root = cfg.data.dataset_root();
        let r = cfg.data.resolution;
        let open = |name, split, policy, tag| open_split(&root, name, split, r, policy, tag, audit);
        let source_train = open(cfg.source, Split::Train, MaskPolicy::Allowed, tags::SOURCE_TRAIN)?;
        let source_val = open(cfg.source, Split::Val, MaskPolicy::Allowed, tags::SOURCE_VAL)?;
        let (target_train, target_val) = match cfg.target {
            Some(t) if cfg.variant != crate::Variant::Fcn => (
                Some(open(t, Split::Train, MaskPolicy::Forbidden, tags::TARGET_TRAIN)?),
                Some(open(t, Split::Val, MaskPolicy::Forbidden, tags::TARGET_VAL)?),
            ),
            _ => (None, None),
        };
        let limit = |n: usize, l: Option<usize>| l.map_or(n, |l| l.min(n));
        Ok(Datasets {
            train_count: limit(source_train.len(), cfg.data.train_limit),
            val_count: limit(source_val.len(), cfg.data.val_limit),
            target_count: target_train.as_ref().map_or(0, |d| limit(d.len(), cfg.data.train_limit)),
            target_val_count: target_val.as_ref().map_or(0, |d| limit(d.len(), cfg.data.val_limit)),
            source_train,
            source_val,
            target_train,
            target_val,
        })
    }
}

/// Indices of the `k`-th target batch of a stream that reshuffles after
/// every pass over the target set.
pub fn target_batch_indices(n: usize, batch_size: usize, seed: u64, k: u64) -> Result<Vec<usize>> {
    let per_epoch = n.div_ceil(batch_size) as u64;
    let mut batches = epoch_batches(n, batch_size, seed, k / per_epoch)?;
    Ok(batches.swap_remove((k % per_epoch) as usize))
}

#[derive(Serialize)]
struct AuditReport<'a> {
    target_mask_reads: Vec<&'a MaskAccess>,
    source_mask_reads: usize,
}

fn write_audit(out: &Path, audit: &MaskAudit) -> Result<()> {
    let records = audit.records();
    let report = AuditReport {
        target_mask_reads: records.iter().filter(|r| r.tag.starts_with("target")).collect(),
        source_mask_reads: records.iter().filter(|r| r.tag.starts_with("source")).count(),
    };
    let path = out.join(AUDIT_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))
}

fn uses_target(cfg: &ExperimentConfig) -> bool {
    cfg.variant != crate::Variant::Fcn
}

fn needs_source_masks(cfg: &ExperimentConfig) -> bool {
    cfg.variant.segments()
}

/// Train any variant. Artifacts land in `cfg.output_dir`.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainState> {
    cfg.validate()?;
    let mut trainer = match &opts.resume {
        Some(path) => {
            let state = checkpoint_load(path)?;
            if state.config != *cfg {
                return Err(Error::Config(format!(
                    "{} was written by a different configuration",
                    path.display()
                )));
            }
            Trainer::from_state(&state)?
        }
        None => Trainer::new(cfg)?,
    };
    let out = cfg.output_dir.clone();
    let _lock = OutputLock::acquire(&out)?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_json()?).map_err(|e| Error::io(&config_path, e))?;
    let log_path = out.join(LOG_FILE);
    let mut log = if opts.resume.is_some() {
        StepLog::resume(&log_path, trainer.progress.global_step, trainer.progress.epoch)?
    } else {
        StepLog::create(&log_path)?
    };
    let data = Datasets::open(cfg, &opts.audit)?;
    let result = train_loop(&mut trainer, &data, &mut log, &out, opts);
    write_audit(&out, &opts.audit)?;
    result?;
    Ok(trainer.state())
}

fn train_loop(t: &mut Trainer, data: &Datasets, log: &mut StepLog, out: &Path, opts: &RunOptions) -> Result<()> {
    let cfg = t.cfg.clone();
    let source_seed = seeds::stream_seed(cfg.seed, "data.source");
    let target_seed = seeds::stream_seed(cfg.seed, "data.target");
    let last = out.join(LAST_CHECKPOINT);
    let exhausted = |global_step: u64| cfg.max_iterations.is_some_and(|m| global_step >= m);
    while !t.progress.finished && t.progress.epoch < cfg.max_epochs {
        if exhausted(t.progress.global_step) && t.progress.step_in_epoch == 0 {
            break;
        }
        let epoch_index = t.progress.epoch;
        let batches = epoch_batches(data.train_count, cfg.batch_size, source_seed, epoch_index)?;
        let mut cut_short = false;
        for idx in batches.iter().skip(t.progress.step_in_epoch as usize) {
            if exhausted(t.progress.global_step) {
                cut_short = true;
                break;
            }
            if opts.stop_at_step == Some(t.progress.global_step) {
                return checkpoint_save(&t.state(), &last);
            }
            let src: Batch = data.source_train.batch(idx, needs_source_masks(&cfg))?;
            let tgt = match (&data.target_train, uses_target(&cfg)) {
                (Some(target), true) => {
                    let k = t.progress.target_batches;
                    let ti = target_batch_indices(data.target_count, cfg.batch_size, target_seed, k)?;
                    Some(target.batch(&ti, false)?)
                }
                _ => None,
            };
            steps::train_step(t, &src, tgt.as_ref(), log)?;
            if tgt.is_some() {
                t.progress.target_batches += 1;
            }
            t.progress.global_step += 1;
            t.progress.step_in_epoch += 1;
        }
        if cut_short {
            t.progress.finished = true;
        } else {
            t.progress.epoch += 1;
            t.progress.step_in_epoch = 0;
        }
        end_of_epoch(t, epoch_index, data, log, out)?;
        if t.progress.epoch >= cfg.max_epochs {
            t.progress.finished = true;
        }
        checkpoint_save(&t.state(), &last)?;
    }
    if !t.progress.finished {
        t.progress.finished = true;
        checkpoint_save(&t.state(), &last)?;
    }
    Ok(())
}

/// Validate, log, track the best checkpoint and render samples for the
/// epoch `epoch` that just ended (possibly cut short).
fn end_of_epoch(t: &mut Trainer, epoch: u64, data: &Datasets, log: &mut StepLog, out: &Path) -> Result<()> {
    t.models.set_mode(Mode::Eval);
    let validation = no_grad(|| steps::validate(t, data));
    let samples = if t.cfg.sample_count > 0 {
        let path = out.join(SAMPLES_DIR).join(format!("epoch_{epoch:04}.png"));
        no_grad(|| evaluation::render_samples(&t.models, &t.cfg, data, t.cfg.sample_count, &path))
    } else {
        Ok(())
    };
    t.models.set_mode(Mode::Train);
    let (components, metric) = validation?;
    samples?;
    log.write(&LogRecord {
        step: t.progress.global_step,
        epoch,
        phase: VAL_PHASE.into(),
        components,
        lr: None,
    })?;
    if let Some(m) = metric {
        let p = &mut t.progress;
        p.val_history.push(m);
        let d = early_stopper(&p.val_history, t.cfg.patience);
        p.epochs_since_improvement = d.epochs_since_best;
        if d.stop {
            p.finished = true;
        }
        if d.is_best {
            p.best_val_metric = Some(m);
            checkpoint_save(&t.state(), &out.join(BEST_CHECKPOINT))?;
        }
    }
    Ok(())
}
