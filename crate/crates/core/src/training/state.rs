//! Resumable training state and its single-file checkpoint.

use std::collections::BTreeMap;
use std::path::Path;

use autograd::{AdamState, Tensor};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nets::archive;
use crate::seeds::StreamPosition;

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: ExperimentConfig,
    /// Completed epochs.
    pub epoch: u64,
    /// Batches already consumed in the current epoch.
    pub step_in_epoch: u64,
    pub global_step: u64,
    /// Target batches consumed so far; the target stream cycles over its
    /// own epochs.
    pub target_batches: u64,
    pub best_val_metric: Option<f64>,
    pub epochs_since_improvement: u64,
    pub val_history: Vec<f64>,
    /// Set once the run reached a stopping condition.
    pub finished: bool,
    pub rng: BTreeMap<String, StreamPosition>,
    pub dropout: BTreeMap<String, StreamPosition>,
    pub parameters: BTreeMap<String, Vec<(String, Tensor)>>,
    pub optimizers: BTreeMap<String, AdamState>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ExperimentConfig,
    epoch: u64,
    step_in_epoch: u64,
    global_step: u64,
    target_batches: u64,
    best_val_metric: Option<f64>,
    epochs_since_improvement: u64,
    val_history: Vec<f64>,
    finished: bool,
    rng: BTreeMap<String, StreamPosition>,
    dropout: BTreeMap<String, StreamPosition>,
    optimizer_steps: BTreeMap<String, u64>,
}

const NET: &str = "net";
const OPT: &str = "opt";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl TrainState {
    fn header(&self) -> Header {
        Header {
            config: self.config.clone(),
            epoch: self.epoch,
            step_in_epoch: self.step_in_epoch,
            global_step: self.global_step,
            target_batches: self.target_batches,
            best_val_metric: self.best_val_metric,
            epochs_since_improvement: self.epochs_since_improvement,
            val_history: self.val_history.clone(),
            finished: self.finished,
            rng: self.rng.clone(),
            dropout: self.dropout.clone(),
            optimizer_steps: self.optimizers.iter().map(|(k, s)| (k.clone(), s.step)).collect(),
        }
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (net, params) in &self.parameters {
            for (name, t) in params {
                out.push((format!("{NET}/{net}/{name}"), t.clone()));
            }
        }
        for (group, s) in &self.optimizers {
            for (kind, moments) in [("m", &s.first_moment), ("v", &s.second_moment)] {
                for (i, t) in moments.iter().enumerate() {
                    out.push((format!("{OPT}/{group}/{kind}/{i}"), t.clone()));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        archive::encode(&serde_json::to_value(self.header())?, &self.tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let a = archive::decode(bytes)?;
        let h: Header = serde_json::from_value(a.meta).map_err(|e| bad(format!("training state header: {e}")))?;
        let mut parameters: BTreeMap<String, Vec<(String, Tensor)>> = BTreeMap::new();
        let mut optimizers: BTreeMap<String, AdamState> = h
            .optimizer_steps
            .iter()
            .map(|(k, &step)| {
                let state = AdamState {
                    step,
                    first_moment: Vec::new(),
                    second_moment: Vec::new(),
                };
                (k.clone(), state)
            })
            .collect();
        for (name, t) in a.tensors {
            let mut parts = name.splitn(3, '/');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(NET), Some(net), Some(param)) => {
                    parameters.entry(net.to_string()).or_default().push((param.to_string(), t));
                }
                (Some(OPT), Some(group), Some(rest)) => {
                    let s = optimizers
                        .get_mut(group)
                        .ok_or_else(|| bad(format!("moments for unknown optimizer '{group}'")))?;
                    let (kind, index) = rest.split_once('/').ok_or_else(|| bad(format!("bad tensor name {name}")))?;
                    let slot = match kind {
                        "m" => &mut s.first_moment,
                        "v" => &mut s.second_moment,
                        _ => return Err(bad(format!("bad tensor name {name}"))),
                    };
                    if index.parse::<usize>().ok() != Some(slot.len()) {
                        return Err(bad(format!("moment {name} out of order")));
                    }
                    slot.push(t);
                }
                _ => return Err(bad(format!("unexpected tensor {name}"))),
            }
        }
        Ok(TrainState {
            config: h.config,
            epoch: h.epoch,
            step_in_epoch: h.step_in_epoch,
            global_step: h.global_step,
            target_batches: h.target_batches,
            best_val_metric: h.best_val_metric,
            epochs_since_improvement: h.epochs_since_improvement,
            val_history: h.val_history,
            finished: h.finished,
            rng: h.rng,
            dropout: h.dropout,
            parameters,
            optimizers,
        })
    }
}

/// Write atomically: a partial file is renamed into place once complete.
pub fn checkpoint_save(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, state.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            bad(format!("{} does not exist", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    TrainState::from_bytes(&bytes)
}
