//! Global-count IoU, segmentation reports, the result and parameter tables,
//! and image grids.

pub mod render;
pub mod tables;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use autograd::{no_grad, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::data::build::DatasetManifest;
use crate::data::loader::{MaskAudit, MaskPolicy, SplitData};
use crate::data::DomainLabel;
use crate::error::{Error, Result};
use crate::nets::Mode;
use crate::training::{checkpoint_load, Models, Trainer};
use crate::variant::Variant;

pub use render::{image_grid, render_samples, tensor_rasters, translation_gallery, GridRow};
pub use tables::{param_table, reference_networks, results_table, ParamRow, ParamTable, ResultRow, ResultsTable};

pub const THRESHOLD: f32 = 0.5;
pub const BACKGROUND: usize = 0;
pub const DIGIT: usize = 1;
pub const CLASS_NAMES: [&str; 2] = ["background", "digit"];

/// Pixel counts of one class over a whole evaluation set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    /// `TP / (TP + FP + FN)`, or 1 when the class occurs in neither
    /// prediction nor target.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Threshold probabilities into {0, 1}.
pub fn binarize(t: &Tensor, threshold: f32) -> Tensor {
    t.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

fn check_binary(t: &Tensor, what: &str) -> Result<()> {
    if t.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("{what} mask is not binary")));
    }
    Ok(())
}

/// Counts of `class_id` (1 = digit, 0 = background on inverted masks).
pub fn confusion(pred: &Tensor, target: &Tensor, class_id: usize) -> Result<Confusion> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if class_id > DIGIT {
        return Err(Error::InvalidArgument(format!("binary masks have no class {class_id}")));
    }
    check_binary(pred, "predicted")?;
    check_binary(target, "target")?;
    let on = class_id as f32;
    let mut c = Confusion::default();
    for (&p, &t) in pred.data().iter().zip(target.data().iter()) {
        match (p == on, t == on) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

pub fn iou(pred: &Tensor, target: &Tensor, class_id: usize) -> Result<f64> {
    Ok(confusion(pred, target, class_id)?.iou())
}

/// Per-class IoU of one model on one test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub variant: Variant,
    /// Whether the split belongs to the model's source or target domain.
    pub domain: DomainLabel,
    pub per_class_iou: BTreeMap<String, f64>,
    pub miou: f64,
    pub dataset: DatasetManifest,
    pub checkpoint: PathBuf,
    pub n_samples: usize,
}

impl SegReport {
    pub fn class_iou(&self, class: &str) -> Option<f64> {
        self.per_class_iou.get(class).copied()
    }
}

/// Accumulate background and digit counts over the first `n` samples.
pub fn evaluate_models(models: &Models, data: &SplitData, n: usize, batch_size: usize) -> Result<[Confusion; 2]> {
    let mut counts = [Confusion::default(); 2];
    let idx: Vec<usize> = (0..n.min(data.len())).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = data.batch(chunk, true)?;
        let pred = no_grad(|| models.segment(&Var::constant(b.images.clone())))?;
        let pred = binarize(&pred.value(), THRESHOLD);
        let target = b.masks.as_ref().expect("masks requested");
        for (class, slot) in counts.iter_mut().enumerate() {
            slot.add(confusion(&pred, target, class)?);
        }
    }
    Ok(counts)
}

/// Evaluate a segmenting checkpoint in eval mode on the split stored at
/// `split_dir`.
pub fn evaluate_segmenter(checkpoint: &Path, split_dir: &Path, variant: Variant) -> Result<SegReport> {
    let state = checkpoint_load(checkpoint)?;
    if state.config.variant != variant {
        return Err(Error::Config(format!(
            "{} holds a {} model, not {variant}",
            checkpoint.display(),
            state.config.variant
        )));
    }
    if !variant.segments() {
        return Err(Error::Config(format!("{variant} has no segmenter to evaluate")));
    }
    let trainer = Trainer::from_state(&state)?;
    trainer.models.set_mode(Mode::Eval);
    let data = SplitData::open(split_dir, MaskPolicy::Allowed, "eval", &MaskAudit::new())?;
    let r = state.config.data.resolution;
    if data.resolution() != (r, r) {
        return Err(Error::Dimension(format!(
            "model trained at {r}x{r}, {} holds {:?}",
            split_dir.display(),
            data.resolution()
        )));
    }
    let counts = evaluate_models(&trainer.models, &data, data.len(), state.config.batch_size)?;
    let per_class_iou: BTreeMap<String, f64> = CLASS_NAMES
        .iter()
        .zip(counts.iter())
        .map(|(name, c)| (name.to_string(), c.iou()))
        .collect();
    let miou = per_class_iou.values().sum::<f64>() / per_class_iou.len() as f64;
    let domain = if data.manifest.name == state.config.source {
        DomainLabel::Source
    } else {
        DomainLabel::Target
    };
    Ok(SegReport {
        variant,
        domain,
        per_class_iou,
        miou,
        n_samples: data.len(),
        dataset: data.manifest.clone(),
        checkpoint: checkpoint.to_path_buf(),
    })
}
