//! Short-time Fourier analysis and mel filtering.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl Window {
    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / nf;
                match self {
                    Window::Hann => 0.5 - 0.5 * phase.cos(),
                    Window::Hamming => 0.54 - 0.46 * phase.cos(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameParams {
    pub frame_size: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: Window,
}

impl Default for FrameParams {
    fn default() -> Self {
        Self {
            frame_size: 2048,
            hop: 1024,
            window: Window::Hann,
        }
    }
}

impl FrameParams {
    pub fn validate(&self) -> Result<()> {
        if self.frame_size == 0 || self.hop == 0 {
            return Err(Error::InvalidParameter(
                "frame size and hop must be positive".into(),
            ));
        }
        if self.hop > self.frame_size {
            return Err(Error::InvalidParameter(format!(
                "hop {} exceeds frame size {}",
                self.hop, self.frame_size
            )));
        }
        Ok(())
    }

    /// Number of complete frames in a signal of `n_samples`; partial trailing frames are dropped.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        if n_samples < self.frame_size {
            0
        } else {
            (n_samples - self.frame_size) / self.hop + 1
        }
    }

    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }
}

/// Magnitude STFT. Rows are frames, columns are the non-negative frequency bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub params: FrameParams,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.magnitudes.ncols()
    }
}

pub fn stft_magnitude(clip: &AudioClip, params: FrameParams) -> Result<Spectrogram> {
    params.validate()?;
    let x = clip.samples();
    let n_frames = params.frame_count(x.len());
    if n_frames == 0 {
        return Err(Error::TooShort {
            needed: params.frame_size,
            got: x.len(),
            unit: "samples",
        });
    }
    let n = params.frame_size;
    let n_bins = params.n_bins();
    let window = params.window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); n];
    let mut magnitudes = Array2::zeros((n_frames, n_bins));
    for (t, mut row) in magnitudes.outer_iter_mut().enumerate() {
        let start = t * params.hop;
        for ((b, &s), &w) in buf.iter_mut().zip(&x[start..start + n]).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (m, c) in row.iter_mut().zip(&buf[..n_bins]) {
            *m = c.norm();
        }
    }
    Ok(Spectrogram {
        magnitudes,
        params,
        sample_rate: clip.sample_rate(),
    })
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters with unit peak. Rows are FFT bins, columns are bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub weights: Array2<f64>,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelFilterbank {
    /// Filter edge frequencies in Hz: `n_mels + 2` points, band `m` spans `[m, m+2]` with peak at `m+1`.
    pub fn edges_hz(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect()
    }
}

pub fn mel_filterbank(
    n_fft_bins: usize,
    n_mels: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Result<MelFilterbank> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_mels == 0 {
        return Err(Error::InvalidParameter("n_mels must be at least 1".into()));
    }
    if n_fft_bins < 2 {
        return Err(Error::InvalidParameter("need at least 2 FFT bins".into()));
    }
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::InvalidParameter(format!(
            "invalid mel frequency range [{f_min}, {f_max}] for nyquist {nyquist}"
        )));
    }
    let edges = MelFilterbank::edges_hz(n_mels, f_min, f_max);
    let bin_hz = nyquist / (n_fft_bins - 1) as f64;
    let mut weights = Array2::zeros((n_fft_bins, n_mels));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_fft_bins {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            weights[[k, m]] = rising.min(falling).max(0.0);
        }
        if weights.column(m).iter().all(|&w| w <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mel band {m} covers no FFT bin; use fewer bands or a larger FFT"
            )));
        }
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        f_min,
        f_max,
    })
}

/// `A = S·B`: project each spectrogram frame onto the mel bands.
pub fn mel_spectrogram(spec: &Spectrogram, fb: &MelFilterbank) -> Result<FeatureMatrix> {
    let values = mel_project(spec.magnitudes.view(), fb)?;
    let names = (0..fb.n_mels).map(|i| format!("mel{i}")).collect();
    FeatureMatrix::new(values, names, FeatureSource::MelSpec)
}

pub(crate) fn mel_project(mags: ArrayView2<f64>, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if mags.ncols() != fb.weights.nrows() {
        return Err(Error::DimensionMismatch {
            expected: fb.weights.nrows(),
            got: mags.ncols(),
        });
    }
    Ok(mags.dot(&fb.weights))
}
