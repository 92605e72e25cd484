use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use super::{MelClip, MelConfig, Waveform};
use crate::error::{Error, Result};

// Power floor before taking logs; anything at or below it counts as silence.
const AMIN: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Frames produced by center framing with `window_len / 2` reflect padding.
pub fn frame_count(n_samples: usize, window_len: usize, hop_len: usize) -> usize {
    (n_samples + 2 * (window_len / 2) - window_len) / hop_len + 1
}

/// Triangular filters on the HTK mel scale, row-major `n_mels × (window_len/2 + 1)`.
///
/// A filter narrower than the FFT bin spacing can miss every bin centre; such
/// a filter is collapsed onto the bin nearest its centre so no row is empty.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<f64> {
    let n_bins = cfg.window_len / 2 + 1;
    let bin_hz = f64::from(cfg.sample_rate) / cfg.window_len as f64;
    let (m_lo, m_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut fb[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            *w = up.min(down).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            let nearest = ((mid / bin_hz).round() as usize).min(n_bins - 1);
            row[nearest] = 1.0;
        }
    }
    fb
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Power mel spectrogram mapped to dB, floored `top_db` below its peak, and
/// scaled so the peak is 1 and the floor is −1. Silence maps to all −1.
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig, clip_id: &str, block_frames: usize) -> Result<MelClip> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "waveform at {} Hz, config expects {} Hz",
            w.sample_rate(),
            cfg.sample_rate
        )));
    }
    let n = w.samples().len();
    if n < cfg.window_len {
        return Err(Error::TooShort {
            len: n,
            needed: cfg.window_len,
        });
    }
    let half = cfg.window_len / 2;
    let padded = reflect_pad(w.samples(), half);
    let n_frames = frame_count(n, cfg.window_len, cfg.hop_len);
    let n_bins = cfg.window_len / 2 + 1;
    let window = periodic_hann(cfg.window_len);
    let fft = FftPlanner::new().plan_fft_forward(cfg.window_len);
    let fb = mel_filterbank(cfg);

    let mut power = vec![0.0; cfg.n_mels * n_frames];
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.window_len];
    let mut spec = vec![0.0; n_bins];
    for f in 0..n_frames {
        let start = f * cfg.hop_len;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, s) in spec.iter_mut().enumerate() {
            *s = buf[k].norm_sqr();
        }
        for m in 0..cfg.n_mels {
            let row = &fb[m * n_bins..(m + 1) * n_bins];
            power[m * n_frames + f] = row.iter().zip(&spec).map(|(a, b)| a * b).sum();
        }
    }

    let peak = power.iter().cloned().fold(0.0, f64::max);
    let values = if peak <= AMIN {
        vec![-1.0; power.len()]
    } else {
        let max_db = 10.0 * peak.log10();
        let floor = max_db - cfg.top_db;
        power
            .iter()
            .map(|&p| {
                let db = (10.0 * p.max(AMIN).log10()).max(floor);
                ((db - max_db) / cfg.top_db * 2.0 + 1.0).clamp(-1.0, 1.0)
            })
            .collect()
    };
    MelClip::new(clip_id, cfg.n_mels, n_frames, values, *cfg, block_frames)
}
