//! Per-frame feature sets: HANDCRAFTED, MEL-SPEC and MEL-RP.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::dsp::{self, FrameParams, MelFilterbank};
use crate::error::{Error, Result};

/// Floor applied before logarithms and in the flatness ratio.
pub const EPS: f64 = 1e-10;

pub const HANDCRAFTED_NAMES: [&str; 6] = ["centroid", "rolloff", "flux", "flatness", "energy", "zcr"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Handcrafted,
    MelSpec,
    MelRp,
    MelAe,
    Texture,
}

impl FeatureSource {
    pub fn code(self) -> u8 {
        match self {
            FeatureSource::Handcrafted => 0,
            FeatureSource::MelSpec => 1,
            FeatureSource::MelRp => 2,
            FeatureSource::MelAe => 3,
            FeatureSource::Texture => 4,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => FeatureSource::Handcrafted,
            1 => FeatureSource::MelSpec,
            2 => FeatureSource::MelRp,
            3 => FeatureSource::MelAe,
            4 => FeatureSource::Texture,
            _ => return None,
        })
    }
}

/// Row-major feature vectors with a name per column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub names: Vec<String>,
    pub source: FeatureSource,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, names: Vec<String>, source: FeatureSource) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::DimensionMismatch {
                expected: values.ncols(),
                got: names.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            values,
            names,
            source,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Magnitude-weighted mean bin index, bins numbered from 1. Zero for an all-zero frame.
pub fn spectral_centroid(frame: ArrayView1<f64>) -> f64 {
    let total: f64 = frame.sum();
    if total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = frame
        .iter()
        .enumerate()
        .map(|(i, &m)| (i + 1) as f64 * m)
        .sum();
    weighted / total
}

/// Smallest 1-based bin `R` whose cumulative magnitude reaches `fraction` of the total.
pub fn spectral_rolloff(frame: ArrayView1<f64>, fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "rolloff fraction {fraction} not in (0, 1]"
        )));
    }
    let total: f64 = frame.sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let target = fraction * total;
    let mut acc = 0.0;
    for (i, &m) in frame.iter().enumerate() {
        acc += m;
        if acc >= target {
            return Ok((i + 1) as f64);
        }
    }
    // accumulated rounding can leave acc a hair under target
    Ok(frame.len() as f64)
}

pub fn spectral_flux(frame: ArrayView1<f64>, prev: ArrayView1<f64>) -> Result<f64> {
    if frame.len() != prev.len() {
        return Err(Error::DimensionMismatch {
            expected: prev.len(),
            got: frame.len(),
        });
    }
    Ok(frame
        .iter()
        .zip(prev.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

pub fn energy(frame: ArrayView1<f64>) -> f64 {
    frame.iter().map(|m| m * m).sum()
}

/// Geometric over arithmetic mean of `frame + EPS`.
pub fn spectral_flatness(frame: ArrayView1<f64>) -> f64 {
    let n = frame.len() as f64;
    if frame.is_empty() {
        return 1.0;
    }
    let log_mean = frame.iter().map(|m| (m + EPS).ln()).sum::<f64>() / n;
    let mean = frame.iter().map(|m| m + EPS).sum::<f64>() / n;
    (log_mean.exp() / mean).min(1.0)
}

/// `Z = 1/(2T) Σ_{t=1}^{T-1} |sign(x[t+1]) - sign(x[t])|` with `sign(k) = 1` for `k >= 0`, else 0.
pub fn zero_crossing_rate(frame: &[f64]) -> Result<f64> {
    if frame.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: frame.len(),
            unit: "samples",
        });
    }
    let sign = |v: f64| v >= 0.0;
    let crossings = frame
        .windows(2)
        .filter(|w| sign(w[0]) != sign(w[1]))
        .count();
    Ok(crossings as f64 / (2.0 * frame.len() as f64))
}

/// Orthonormal DCT-II basis, `n_out × n_in`.
pub fn dct_matrix(n_in: usize, n_out: usize) -> Array2<f64> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos()
    })
}

/// Precomputed log-mel cepstrum transform.
#[derive(Debug, Clone)]
pub struct Mfcc {
    basis: Array2<f64>,
}

impl Mfcc {
    pub fn new(n_bands: usize, n_coeffs: usize) -> Result<Self> {
        if n_coeffs == 0 || n_coeffs > n_bands {
            return Err(Error::InvalidParameter(format!(
                "{n_coeffs} MFCC coefficients requested from {n_bands} mel bands"
            )));
        }
        Ok(Self {
            basis: dct_matrix(n_bands, n_coeffs),
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.basis.nrows()
    }

    pub fn compute(&self, mel_frame: ArrayView1<f64>) -> Result<Vec<f64>> {
        if mel_frame.len() != self.basis.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.ncols(),
                got: mel_frame.len(),
            });
        }
        if mel_frame.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("negative mel energy".into()));
        }
        let logs = mel_frame.mapv(|v| (v + EPS).ln());
        Ok(self.basis.dot(&logs).to_vec())
    }
}

pub fn mfcc(mel_frame: ArrayView1<f64>, n_coeffs: usize) -> Result<Vec<f64>> {
    Mfcc::new(mel_frame.len(), n_coeffs)?.compute(mel_frame)
}

/// Orthonormal DCT-III (inverse of [`dct_matrix`] when square), mapping cepstra back to log-mel.
pub fn inverse_dct(coeffs: &[f64]) -> Vec<f64> {
    let basis = dct_matrix(coeffs.len(), coeffs.len());
    basis.t().dot(&ArrayView1::from(coeffs)).to_vec()
}

pub const N_MFCC: usize = 20;
pub const N_MELS: usize = 128;

pub fn default_filterbank(params: &FrameParams, sample_rate: u32) -> Result<MelFilterbank> {
    dsp::mel_filterbank(
        params.n_bins(),
        N_MELS,
        sample_rate,
        0.0,
        sample_rate as f64 / 2.0,
    )
}

/// 26 features per frame: six spectral/temporal descriptors and 20 MFCCs.
pub fn handcrafted_frame_features(clip: &AudioClip, params: FrameParams) -> Result<FeatureMatrix> {
    let spec = dsp::stft_magnitude(clip, params)?;
    let fb = default_filterbank(&params, clip.sample_rate())?;
    let mel = dsp::mel_project(spec.magnitudes.view(), &fb)?;
    let mfcc = Mfcc::new(N_MELS, N_MFCC)?;
    let n_frames = spec.n_frames();
    let n_cols = HANDCRAFTED_NAMES.len() + N_MFCC;
    let mut values = Array2::zeros((n_frames, n_cols));
    let zeros = ndarray::Array1::<f64>::zeros(spec.n_bins());
    let samples = clip.samples();
    for t in 0..n_frames {
        let row = spec.magnitudes.row(t);
        let prev = if t == 0 {
            zeros.view()
        } else {
            spec.magnitudes.row(t - 1)
        };
        let start = t * params.hop;
        let mut out = values.row_mut(t);
        out[0] = spectral_centroid(row);
        out[1] = spectral_rolloff(row, 0.85)?;
        out[2] = spectral_flux(row, prev)?;
        out[3] = spectral_flatness(row);
        out[4] = energy(row);
        out[5] = zero_crossing_rate(&samples[start..start + params.frame_size])?;
        for (o, c) in out
            .iter_mut()
            .skip(HANDCRAFTED_NAMES.len())
            .zip(mfcc.compute(mel.row(t))?)
        {
            *o = c;
        }
    }
    let names = HANDCRAFTED_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain((1..=N_MFCC).map(|i| format!("mfcc{i}")))
        .collect();
    FeatureMatrix::new(values, names, FeatureSource::Handcrafted)
}

/// 128-band mel spectrogram of the clip.
pub fn mel_frame_features(clip: &AudioClip, params: FrameParams) -> Result<FeatureMatrix> {
    let spec = dsp::stft_magnitude(clip, params)?;
    let fb = default_filterbank(&params, clip.sample_rate())?;
    dsp::mel_spectrogram(&spec, &fb)
}

/// Gaussian random matrix (mean 0, variance 1) of shape `n_in × m_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub weights: Array2<f64>,
    pub seed: u64,
}

pub const PROJECTION_DIMS: [usize; 5] = [8, 26, 51, 75, 100];

pub fn make_projection(n_in: usize, m_out: usize, seed: u64) -> Result<ProjectionMatrix> {
    if m_out == 0 || m_out >= n_in {
        return Err(Error::InvalidParameter(format!(
            "projection target dimension {m_out} must be in [1, {n_in})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Array2::from_shape_simple_fn((n_in, m_out), || StandardNormal.sample(&mut rng));
    Ok(ProjectionMatrix { weights, seed })
}

/// `A' = A·R`.
pub fn apply_projection(a: &FeatureMatrix, p: &ProjectionMatrix) -> Result<FeatureMatrix> {
    if a.ncols() != p.weights.nrows() {
        return Err(Error::DimensionMismatch {
            expected: p.weights.nrows(),
            got: a.ncols(),
        });
    }
    let values = a.values.dot(&p.weights);
    let names = (0..p.weights.ncols()).map(|i| format!("rp{i}")).collect();
    FeatureMatrix::new(values, names, FeatureSource::MelRp)
}
