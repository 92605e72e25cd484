//! Audio front end: WAV decoding, resampling, normalized log-mel
//! spectrograms, and fixed-size blocking.

mod blocks;
mod mel;
mod melfile;
mod resample;
mod wav;

pub use blocks::{chunk_blocks, Block};
pub use mel::{frame_count, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz};
pub use melfile::{read_melc, sidecar_path, write_melc, MELC_MAGIC};
pub use resample::{resample, SINC_TAPS_PER_SIDE};
pub use wav::decode_wav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop_len: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub top_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self::with_rate(22050)
    }
}

impl MelConfig {
    /// Defaults (window 2048, hop 512, 256 mel bands, full band, 80 dB) at
    /// the given sample rate.
    pub fn with_rate(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            window_len: 2048,
            hop_len: 512,
            n_mels: 256,
            f_min: 0.0,
            f_max: f64::from(sample_rate) / 2.0,
            top_db: 80.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.window_len < 2 {
            return bad("window_len must be at least 2".into());
        }
        if self.hop_len == 0 || self.hop_len > self.window_len {
            return bad(format!("need 0 < hop_len <= window_len, got {}", self.hop_len));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return bad(format!(
                "need 0 <= f_min < f_max <= {nyquist}, got [{}, {}]",
                self.f_min, self.f_max
            ));
        }
        if !(self.top_db > 0.0) {
            return bad("top_db must be positive".into());
        }
        Ok(())
    }

    pub fn block_duration_secs(&self, block_frames: usize) -> f64 {
        (block_frames * self.hop_len) as f64 / f64::from(self.sample_rate)
    }
}

/// Normalized log-mel spectrogram of one clip, values in `[-1, 1]`, stored
/// row-major as `n_mels × n_frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelClip {
    pub clip_id: String,
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
    pub config: MelConfig,
    pub block_frames: usize,
}

impl MelClip {
    pub fn new(
        clip_id: impl Into<String>,
        n_mels: usize,
        n_frames: usize,
        values: Vec<f64>,
        config: MelConfig,
        block_frames: usize,
    ) -> Result<Self> {
        if n_frames == 0 || n_mels == 0 {
            return Err(Error::InvalidArgument("mel clip needs at least one frame and band".into()));
        }
        if values.len() != n_mels * n_frames {
            return Err(Error::Shape {
                expected: vec![n_mels, n_frames],
                actual: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidArgument("mel values must be finite and in [-1, 1]".into()));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            n_mels,
            n_frames,
            values,
            config,
            block_frames,
        })
    }

    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }
}
