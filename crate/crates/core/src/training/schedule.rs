//! Learning-rate decay and early stopping.

use serde::{Deserialize, Serialize};

use super::config::{DecayInterval, OptimSpec};

/// `lr * decay^k` with `k = epoch` or `k = floor(step / n)`.
pub fn lr_schedule(spec: &OptimSpec, step: u64, epoch: u64) -> f32 {
    let k = match spec.decay_interval {
        DecayInterval::PerEpoch => epoch,
        DecayInterval::PerNIterations(n) => step / n.max(1),
    };
    let k = i32::try_from(k).unwrap_or(i32::MAX);
    (spec.learning_rate as f64 * (spec.decay_factor as f64).powi(k)) as f32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopDecision {
    pub stop: bool,
    /// The newest entry is strictly below every earlier one.
    pub is_best: bool,
    pub epochs_since_best: u64,
}

/// Decide after appending the newest validation loss to `history`.
pub fn early_stopper(history: &[f64], patience: u64) -> StopDecision {
    let Some((&last, earlier)) = history.split_last() else {
        return StopDecision {
            stop: false,
            is_best: false,
            epochs_since_best: 0,
        };
    };
    let is_best = earlier.iter().all(|&v| last < v);
    // first occurrence of the minimum, so ties do not reset the counter
    let best_at = history
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v < history[best] { i } else { best });
    let since = (history.len() - 1 - best_at) as u64;
    StopDecision {
        stop: since > patience,
        is_best,
        epochs_since_best: since,
    }
}
