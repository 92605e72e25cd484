use std::path::Path;

use hound::{SampleFormat, WavReader};

use super::Waveform;
use crate::error::{Error, Result};

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a PCM16 or float32 RIFF/WAVE file, mono or stereo. Stereo is
/// averaged to mono; integer samples are scaled by 1/32768.
pub fn decode_wav(path: &Path) -> Result<Waveform> {
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => Error::Io(io),
        hound::Error::Unsupported => Error::UnsupportedCodec {
            path: path.to_path_buf(),
            codec: "non-PCM encoding".into(),
        },
        other => format_err(path, other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedCodec {
            path: path.to_path_buf(),
            codec: format!("{channels} channels"),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(path, e.to_string()))?,
        (SampleFormat::Float, 32) => {
            let raw: Vec<f32> = reader
                .into_samples::<f32>()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format_err(path, e.to_string()))?;
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(format_err(path, "non-finite float sample"));
            }
            raw.into_iter().map(|v| f64::from(v).clamp(-1.0, 1.0)).collect()
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.to_path_buf(),
                codec: format!("{fmt:?} {bits}-bit"),
            })
        }
    };
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hound::{WavSpec, WavWriter};
    use std::io::Write;

    fn write_i16(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for s in samples {
            w.write_sample(*s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_decodes_to_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_i16(&p, 1, 22050, &vec![0; 22050]);
        let w = decode_wav(&p).unwrap();
        assert_eq!(w.sample_rate(), 22050);
        assert_eq!(w.samples().len(), 22050);
        assert!(w.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn int16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.wav");
        write_i16(&p, 1, 8000, &[16384, -32768]);
        let w = decode_wav(&p).unwrap();
        assert_eq!(w.samples(), &[0.5, -1.0]);
    }

    #[test]
    fn stereo_downmix_by_mean() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.2f32).unwrap();
        w.write_sample(0.6f32).unwrap();
        w.finalize().unwrap();
        let wav = decode_wav(&p).unwrap();
        assert!((wav.samples()[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn malformed_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.wav");
        std::fs::File::create(&p).unwrap().write_all(b"RIFX garbage").unwrap();
        assert!(matches!(decode_wav(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn mu_law_is_unsupported() {
        // Minimal RIFF/WAVE with format tag 7 (mu-law), 8-bit mono.
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(4u32 + 8 + 16 + 8 + 4).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&7u16.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&8u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&[0xff; 4]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ulaw.wav");
        std::fs::write(&p, b).unwrap();
        assert!(matches!(decode_wav(&p), Err(Error::UnsupportedCodec { .. })));
    }

    #[test]
    fn pcm8_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p8.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(decode_wav(&p), Err(Error::UnsupportedCodec { .. })));
    }
}
