use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{read_checkpoint, write_checkpoint, EncoderConfig, ParamStore};
use crate::error::{Error, Result};

/// A parameter snapshot saved during training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Optimizer steps taken when the snapshot was saved.
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub params: ParamStore,
}

/// Snapshots in strictly increasing step order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointTrace {
    checkpoints: Vec<Checkpoint>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    step: u64,
    epoch: usize,
    lr: f64,
    file: String,
}

const INDEX_FILE: &str = "trace.json";

impl CheckpointTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ckpt: Checkpoint) -> Result<()> {
        if let Some(last) = self.checkpoints.last() {
            if ckpt.step <= last.step {
                return Err(Error::invalid(format!("checkpoint step {} after {}", ckpt.step, last.step)));
            }
            if !ckpt.params.same_layout(&last.params) {
                return Err(Error::invalid("checkpoint layouts differ within one trace"));
            }
        }
        self.checkpoints.push(ckpt);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Checkpoint> {
        self.checkpoints.iter()
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }

    pub fn params(&self) -> Vec<&ParamStore> {
        self.checkpoints.iter().map(|c| &c.params).collect()
    }

    /// Fails unless every snapshot has the layout of `reference`.
    pub fn check_layout(&self, reference: &ParamStore) -> Result<()> {
        match self.checkpoints.iter().position(|c| !c.params.same_layout(reference)) {
            Some(i) => Err(Error::invalid(format!("checkpoint {i} does not match the encoder layout"))),
            None => Ok(()),
        }
    }

    /// Writes one checkpoint file per snapshot plus a JSON index into `dir`.
    pub fn save(&self, dir: &Path, cfg: &EncoderConfig) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = Vec::with_capacity(self.len());
        for (i, c) in self.checkpoints.iter().enumerate() {
            let file = format!("ckpt-{i:03}.mtca");
            let mut w = BufWriter::new(File::create(dir.join(&file))?);
            write_checkpoint(&mut w, cfg, &c.params)?;
            index.push(IndexEntry { step: c.step, epoch: c.epoch, lr: c.lr, file });
        }
        fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: Vec<IndexEntry> = serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
        let mut trace = Self::new();
        for e in index {
            if e.file.contains(['/', '\\']) {
                return Err(Error::Format(format!("checkpoint file name {} escapes the trace directory", e.file)));
            }
            let (_, params) = read_checkpoint(&mut BufReader::new(File::open(dir.join(&e.file))?))?;
            trace.push(Checkpoint { step: e.step, epoch: e.epoch, lr: e.lr, params })?;
        }
        Ok(trace)
    }
}
