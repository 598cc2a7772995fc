//! Append-only JSON-lines training log and the output directory lock.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimizer update or one validation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: u64,
    pub phase: String,
    pub components: BTreeMap<String, f32>,
    pub lr: Option<f32>,
}

pub const VAL_PHASE: &str = "val";

pub struct StepLog {
    path: PathBuf,
    file: File,
}

impl StepLog {
    /// Start a new log, replacing any previous one.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(StepLog {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Reopen a log for a resumed run, dropping records written after the
    /// checkpoint being resumed: updates at `step >= global_step` and
    /// validations of epochs `>= epoch`.
    pub fn resume(path: &Path, global_step: u64, epoch: u64) -> Result<Self> {
        let kept: Vec<LogRecord> = if path.exists() {
            read_log(path)?
                .into_iter()
                .filter(|r| {
                    if r.phase == VAL_PHASE {
                        r.epoch < epoch
                    } else {
                        r.step < global_step
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let mut log = StepLog::create(path)?;
        for r in &kept {
            log.write(r)?;
        }
        Ok(log)
    }

    pub fn write(&mut self, record: &LogRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".lock";

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Runtime(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
