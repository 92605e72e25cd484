//! `MELC1` tensor files: an ASCII header line
//! `MELC1 <n_mels> <n_frames> <sample_rate> <hop>` followed by row-major
//! little-endian `f32` values, plus a JSON sidecar carrying the full config.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MelClip, MelConfig};
use crate::error::{Error, Result};

pub const MELC_MAGIC: &str = "MELC1";

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    clip_id: String,
    block_frames: usize,
    config: MelConfig,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn write_melc(path: &Path, clip: &MelClip) -> Result<()> {
    let mut bytes = format!(
        "{MELC_MAGIC} {} {} {} {}\n",
        clip.n_mels, clip.n_frames, clip.config.sample_rate, clip.config.hop_len
    )
    .into_bytes();
    bytes.reserve(clip.values.len() * 4);
    for v in &clip.values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    crate::io::write_atomic(path, &bytes)?;
    let side = Sidecar {
        clip_id: clip.clip_id.clone(),
        block_frames: clip.block_frames,
        config: clip.config,
    };
    crate::io::write_atomic(&sidecar_path(path), &serde_json::to_vec_pretty(&side)?)
}

/// Reads a tensor file and its sidecar. Without a sidecar the clip id is the
/// file stem and the config is the default with the header's rate and hop.
pub fn read_melc(path: &Path) -> Result<MelClip> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != MELC_MAGIC {
        return Err(bad(path, format!("bad header {:?}", line.trim_end())));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad(path, format!("bad header field {s:?}")));
    let (n_mels, n_frames, sr, hop) = (num(fields[1])?, num(fields[2])?, num(fields[3])?, num(fields[4])?);
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != n_mels * n_frames * 4 {
        return Err(bad(path, format!("payload {} bytes, expected {}", payload.len(), n_mels * n_frames * 4)));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let side_path = sidecar_path(path);
    let side = if side_path.exists() {
        serde_json::from_slice::<Sidecar>(&fs::read(&side_path)?)?
    } else {
        let sample_rate = u32::try_from(sr).map_err(|_| bad(path, "sample rate overflow"))?;
        Sidecar {
            clip_id: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            block_frames: 256,
            config: MelConfig {
                hop_len: hop,
                n_mels,
                ..MelConfig::with_rate(sample_rate)
            },
        }
    };
    if side.config.sample_rate as usize != sr || side.config.hop_len != hop || side.config.n_mels != n_mels {
        return Err(bad(path, "sidecar disagrees with tensor header"));
    }
    MelClip::new(side.clip_id, n_mels, n_frames, values, side.config, side.block_frames)
}
