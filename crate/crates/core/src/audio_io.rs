//! PCM WAV decoding, signal standardization and 16-bit WAV output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use log::warn;

use crate::error::{Error, Result};

/// A mono signal with its sample rate. Samples are nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
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

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of the sample range `[start, end)`, clamped to the clip bounds.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        Self::new(self.samples[start..end].to_vec(), self.sample_rate)
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Decode a PCM WAV file (8/16/24/32-bit integer or 32-bit float) into a mono clip.
///
/// Multi-channel input is averaged per sample frame. Integer samples are
/// scaled by `2^(bits-1)`.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{}: unsupported WAV variant", path.display()))
        }
        other => Error::UnreadableAudio {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnreadableAudio {
            path: path.to_path_buf(),
            reason: "zero channels".into(),
        });
    }
    let interleaved = read_interleaved(reader, spec, path)?;
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let mono = downmix(&interleaved, channels);
    AudioClip::new(mono, spec.sample_rate)
}

fn read_interleaved<R: std::io::Read>(
    reader: WavReader<R>,
    spec: WavSpec,
    path: &Path,
) -> Result<Vec<f64>> {
    let unreadable = |e: hound::Error| Error::UnreadableAudio {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from).map_err(unreadable))
            .collect(),
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale).map_err(unreadable))
                .collect()
        }
        (format, bits) => Err(Error::UnsupportedEncoding(format!(
            "{}: {bits}-bit {format:?}",
            path.display()
        ))),
    }
}

fn downmix(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect()
}

/// Z-score the signal with population variance.
pub fn standardize_signal(clip: &AudioClip) -> Result<AudioClip> {
    let x = clip.samples();
    if x.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: x.len(),
            unit: "samples",
        });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let sd = var.sqrt();
    let samples = x.iter().map(|v| (v - mean) / sd).collect();
    AudioClip::new(samples, clip.sample_rate())
}

/// Write a 16-bit PCM mono WAV. Out-of-range samples are clipped to `[-1, 1]`;
/// the number of clipped samples is returned.
pub fn write_audio(clip: &AudioClip, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    if clip.is_empty() {
        return Err(Error::EmptyAudio);
    }
    if clip.samples().iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample".into()));
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let to_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(other.to_string()),
    };
    let mut writer = WavWriter::create(path, spec).map_err(to_err)?;
    let mut clipped = 0usize;
    for &s in clip.samples() {
        let c = if s > 1.0 {
            clipped += 1;
            1.0
        } else if s < -1.0 {
            clipped += 1;
            -1.0
        } else {
            s
        };
        let q = (c * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(to_err)?;
    }
    writer.finalize().map_err(to_err)?;
    if clipped > 0 {
        warn!("{}: clipped {clipped} samples", path.display());
    }
    Ok(clipped)
}
