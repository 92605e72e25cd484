//! Checkpoint file: one line of JSON header, then the weights as
//! little-endian `f64`.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, DenoiserParams};
use crate::diffusion::ScheduleSpec;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "DDNC1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub arch: Architecture,
    pub param_count: usize,
    pub schedule: ScheduleSpec,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: DenoiserParams,
}

impl Checkpoint {
    pub fn new(params: DenoiserParams, schedule: ScheduleSpec, step: usize) -> Self {
        Self {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                arch: params.arch().clone(),
                param_count: params.param_count(),
                schedule,
                step,
            },
            params,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        out.reserve(self.params.param_count() * 8);
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut reader = BufReader::new(reader);
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        let header: CheckpointHeader = serde_json::from_slice(&line)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        if header.arch.param_count() != header.param_count {
            return Err(Error::Checkpoint(format!(
                "header claims {} parameters but architecture has {}",
                header.param_count,
                header.arch.param_count()
            )));
        }
        let mut payload = Vec::new();
        reader.read_to_end(&mut payload)?;
        if payload.len() != header.param_count * 8 {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                header.param_count * 8
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = DenoiserParams::from_values(header.arch.clone(), values)?;
        Ok(Self { header, params })
    }
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    crate::io::write_atomic(path, &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_reader(fs::File::open(path)?)
}
