use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side of the output instant.
pub const SINC_TAPS_PER_SIDE: usize = 64;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    use std::f64::consts::PI;
    0.42 + 0.5 * (PI * x).cos() + 0.08 * (2.0 * PI * x).cos()
}

/// Band-limited resampling with a Blackman-windowed sinc.
///
/// The kernel spans [`SINC_TAPS_PER_SIDE`] zero crossings each side; when
/// downsampling the cutoff drops to the target Nyquist and the kernel widens
/// accordingly. Weights are renormalized per output sample so constants map
/// to constants, including at the edges.
pub fn resample(w: &Waveform, target_sr: u32) -> Result<Waveform> {
    if target_sr == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    if target_sr == w.sample_rate() {
        return Ok(w.clone());
    }
    let src = w.samples();
    let ratio = f64::from(target_sr) / f64::from(w.sample_rate());
    let cutoff = ratio.min(1.0);
    let half_width = SINC_TAPS_PER_SIDE as f64 / cutoff;
    let out_len = (src.len() as f64 * ratio).round() as usize;
    let out = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(src.len().saturating_sub(1));
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (k, &x) in src.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let weight = sinc(cutoff * d) * blackman(d / half_width);
                acc += weight * x;
                norm += weight;
            }
            if norm.abs() > 1e-12 {
                (acc / norm).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(out, target_sr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};

    #[test]
    fn same_rate_is_identity() {
        let w = Waveform::new((0..100).map(|i| (i as f64 * 0.1).sin() * 0.5).collect(), 16000).unwrap();
        assert_eq!(resample(&w, 16000).unwrap(), w);
    }

    #[test]
    fn dc_is_preserved() {
        let w = Waveform::new(vec![0.3; 4410], 44100).unwrap();
        let r = resample(&w, 22050).unwrap();
        assert!(r.samples().iter().all(|v| (v - 0.3).abs() < 1e-3));
        let up = resample(&w, 48000).unwrap();
        assert!(up.samples().iter().all(|v| (v - 0.3).abs() < 1e-3));
    }

    #[test]
    fn duration_preserved_within_one_sample() {
        for (from, to, n) in [(44100, 22050, 44101), (8000, 22050, 12345), (48000, 44100, 999)] {
            let w = Waveform::new(vec![0.0; n], from).unwrap();
            let r = resample(&w, to).unwrap();
            let d_in = n as f64 / f64::from(from);
            let d_out = r.samples().len() as f64 / f64::from(to);
            assert!((d_in - d_out).abs() <= 1.0 / f64::from(to));
        }
    }

    #[test]
    fn sine_peak_survives_downsampling() {
        let n = 44100;
        let w = Waveform::new(
            (0..n)
                .map(|i| 0.8 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 44100.0).sin())
                .collect(),
            44100,
        )
        .unwrap();
        let r = resample(&w, 22050).unwrap();
        let len = r.samples().len();
        let mut buf: Vec<Complex<f64>> = r.samples().iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(len).process(&mut buf);
        let peak = (1..len / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        let bin_hz = 22050.0 / len as f64;
        assert!((peak as f64 * bin_hz - 440.0).abs() <= bin_hz, "peak bin {peak}");
    }
}
