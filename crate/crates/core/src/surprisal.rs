//! Per-clip surprisal: the sum of block-level variational bounds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserParams;
use crate::diffusion::{elbo, ElboBreakdown, ElboMode, NoiseSchedule};
use crate::dsp::{self, chunk_blocks, MelClip, MelConfig};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboSettings {
    pub mode: ElboMode,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for ElboSettings {
    fn default() -> Self {
        Self {
            mode: ElboMode::Mc,
            mc_samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRecord {
    pub clip_id: String,
    pub n_blocks: usize,
    pub per_block: Vec<f64>,
    pub block_padded: Vec<bool>,
    /// Monte-Carlo standard error of each block's bound.
    pub per_block_stderr: Vec<f64>,
    pub total: f64,
    /// Mean over unpadded blocks (over all blocks if every block is padded).
    pub normalized: f64,
    pub padded_blocks: usize,
    pub model_id: String,
    pub seed: u64,
}

impl SurprisalRecord {
    /// Standard error of `normalized`, treating block estimates as independent.
    pub fn normalized_stderr(&self) -> f64 {
        let chosen: Vec<f64> = self.counted_blocks().map(|i| self.per_block_stderr[i]).collect();
        chosen.iter().map(|s| s * s).sum::<f64>().sqrt() / chosen.len() as f64
    }

    fn counted_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        let all_padded = self.padded_blocks == self.n_blocks;
        (0..self.n_blocks).filter(move |&i| all_padded || !self.block_padded[i])
    }

    pub fn row(&self) -> SurprisalRow {
        SurprisalRow {
            clip_id: self.clip_id.clone(),
            n_blocks: self.n_blocks,
            total_nats: self.total,
            normalized_nats: self.normalized,
            padded_blocks: self.padded_blocks,
            model_id: self.model_id.clone(),
            seed: self.seed,
        }
    }
}

/// One line of the surprisal table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisalRow {
    pub clip_id: String,
    pub n_blocks: usize,
    pub total_nats: f64,
    pub normalized_nats: f64,
    pub padded_blocks: usize,
    pub model_id: String,
    pub seed: u64,
}

fn block_shape(params: &DenoiserParams) -> Result<(usize, usize)> {
    match params.arch().input_shape().as_slice() {
        [h, w] => Ok((*h, *w)),
        other => Err(Error::Config(format!(
            "model input shape {other:?} is not a 2-D spectrogram block"
        ))),
    }
}

/// Scores every block of `clip` independently and sums the bounds.
///
/// All blocks share the same noise streams (derived from `cfg.seed`), so a
/// block's score depends only on its contents.
pub fn clip_surprisal(
    clip: &MelClip,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &ElboSettings,
    model_id: &str,
) -> Result<SurprisalRecord> {
    let (n_mels, block_frames) = block_shape(params)?;
    if clip.n_mels != n_mels {
        return Err(Error::Shape {
            expected: vec![n_mels, block_frames],
            actual: vec![clip.n_mels, clip.n_frames],
        });
    }
    let blocks = chunk_blocks(clip, block_frames)?;
    if blocks.is_empty() {
        return Err(Error::InvalidArgument(format!("clip {} has no blocks", clip.clip_id)));
    }
    let scores: Vec<ElboBreakdown> = blocks
        .par_iter()
        .map(|b| elbo(&b.values, params, sched, cfg.mode, cfg.mc_samples, cfg.seed))
        .collect::<Result<_>>()?;
    let per_block: Vec<f64> = scores.iter().map(|s| s.total).collect();
    if per_block.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite block score in {}", clip.clip_id)));
    }
    let block_padded: Vec<bool> = blocks.iter().map(|b| b.padded).collect();
    let padded_blocks = block_padded.iter().filter(|&&p| p).count();
    let total = per_block.iter().sum();
    let mut rec = SurprisalRecord {
        clip_id: clip.clip_id.clone(),
        n_blocks: blocks.len(),
        per_block_stderr: scores.iter().map(|s| s.stderr).collect(),
        per_block,
        block_padded,
        total,
        normalized: 0.0,
        padded_blocks,
        model_id: model_id.to_string(),
        seed: cfg.seed,
    };
    let counted: Vec<f64> = rec.counted_blocks().map(|i| rec.per_block[i]).collect();
    rec.normalized = counted.iter().sum::<f64>() / counted.len() as f64;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::Reader::from_path(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    reader
        .deserialize::<ManifestEntry>()
        .map(|r| {
            let mut e = r?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            Ok(e)
        })
        .collect()
}

pub fn check_unique(manifest: &[ManifestEntry]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for e in manifest {
        if !seen.insert(e.clip_id.as_str()) {
            return Err(Error::Duplicate(e.clip_id.clone()));
        }
    }
    Ok(())
}

/// Loads a clip from a `MELC1` file, or from audio (decoded, resampled to
/// `mel.sample_rate`, and transformed).
pub fn load_clip(entry: &ManifestEntry, mel: &MelConfig, block_frames: usize) -> Result<MelClip> {
    let is_melc = entry.path.extension().is_some_and(|e| e == "melc");
    if is_melc {
        let mut clip = dsp::read_melc(&entry.path)?;
        clip.clip_id = entry.clip_id.clone();
        return Ok(clip);
    }
    let wav = dsp::decode_wav(&entry.path)?;
    let wav = dsp::resample(&wav, mel.sample_rate)?;
    dsp::mel_spectrogram(&wav, mel, &entry.clip_id, block_frames)
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// One record per successfully scored clip, sorted by `clip_id`.
    pub records: Vec<SurprisalRecord>,
    pub failures: Vec<(String, String)>,
    /// Clips skipped because a row already existed.
    pub skipped: Vec<String>,
}

/// Scores every manifest entry. Each clip gets its own named seed stream, so
/// results do not depend on manifest order. Clips listed in `done` are
/// skipped. A clip that fails to load or score is recorded in `failures`
/// and the run continues.
pub fn batch_surprisal<F>(
    manifest: &[ManifestEntry],
    load: F,
    params: &DenoiserParams,
    sched: &NoiseSchedule,
    cfg: &ElboSettings,
    model_id: &str,
    done: &BTreeSet<String>,
) -> Result<BatchOutcome>
where
    F: Fn(&ManifestEntry) -> Result<MelClip> + Sync,
{
    check_unique(manifest)?;
    let (skip, todo): (Vec<&ManifestEntry>, Vec<&ManifestEntry>) =
        manifest.iter().partition(|e| done.contains(&e.clip_id));
    let results: Vec<(String, Result<SurprisalRecord>)> = todo
        .par_iter()
        .map(|e| {
            let clip_cfg = ElboSettings {
                seed: rng::named_seed(cfg.seed, &format!("clip:{}", e.clip_id)),
                ..*cfg
            };
            let rec = load(e).and_then(|clip| {
                let mut r = clip_surprisal(&clip, params, sched, &clip_cfg, model_id)?;
                r.clip_id = e.clip_id.clone();
                r.seed = cfg.seed;
                Ok(r)
            });
            (e.clip_id.clone(), rec)
        })
        .collect();
    let mut out = BatchOutcome {
        skipped: skip.iter().map(|e| e.clip_id.clone()).collect(),
        ..BatchOutcome::default()
    };
    for (id, r) in results {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(e) => out.failures.push((id, e.to_string())),
        }
    }
    out.records.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    out.failures.sort();
    out.skipped.sort();
    Ok(out)
}

pub fn read_surprisal_table(path: &Path) -> Result<Vec<SurprisalRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes rows sorted by `clip_id`.
pub fn write_surprisal_table(path: &Path, rows: &[SurprisalRow]) -> Result<()> {
    let sorted: BTreeMap<&str, &SurprisalRow> = rows.iter().map(|r| (r.clip_id.as_str(), r)).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in sorted.values() {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::io::write_atomic(path, &bytes)
}
