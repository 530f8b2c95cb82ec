//! Synthetic genre datasets: each genre owns a palette of three sound
//! generators and every track strings together sections drawn from it.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry};
use crate::audio_io::{load_audio, write_audio, AudioClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_genres: usize,
    pub tracks_per_genre: usize,
    pub track_seconds: f64,
    pub sections_per_track: usize,
    pub seed: u64,
    pub n_folds: usize,
    pub sample_rate: u32,
}

impl SyntheticSpec {
    pub fn new(n_genres: usize, tracks_per_genre: usize, track_seconds: f64, sections_per_track: usize, seed: u64) -> Self {
        Self {
            n_genres,
            tracks_per_genre,
            track_seconds,
            sections_per_track,
            seed,
            n_folds: 3,
            sample_rate: 44_100,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_genres == 0 || self.tracks_per_genre == 0 || self.sections_per_track == 0 || self.n_folds == 0 {
            return Err(Error::InvalidParameter("synthetic dataset counts must be positive".into()));
        }
        if !(self.track_seconds > 0.0 && self.track_seconds.is_finite()) || self.sample_rate == 0 {
            return Err(Error::InvalidParameter("track length and sample rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Generator {
    Tones {
        f_lo: f64,
        f_hi: f64,
        harmonics: usize,
        tilt: f64,
        note_seconds: f64,
    },
    Noise {
        center: f64,
        q: f64,
        gate_hz: f64,
        duty: f64,
    },
    Chirp {
        f_lo: f64,
        f_hi: f64,
        sweep_hz: f64,
        am_hz: f64,
        am_depth: f64,
    },
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn palette(rng: &mut ChaCha8Rng) -> [Generator; 3] {
    let f_lo = log_uniform(rng, 80.0, 600.0);
    let c_lo = log_uniform(rng, 150.0, 2000.0);
    [
        Generator::Tones {
            f_lo,
            f_hi: f_lo * rng.gen_range(1.5..4.0),
            harmonics: rng.gen_range(2..10),
            tilt: rng.gen_range(0.3..2.0),
            note_seconds: rng.gen_range(0.12..0.8),
        },
        Generator::Noise {
            center: log_uniform(rng, 300.0, 9000.0),
            q: rng.gen_range(0.7..6.0),
            gate_hz: rng.gen_range(0.5..8.0),
            duty: rng.gen_range(0.3..0.9),
        },
        Generator::Chirp {
            f_lo: c_lo,
            f_hi: c_lo * rng.gen_range(1.3..3.0),
            sweep_hz: rng.gen_range(0.1..2.0),
            am_hz: rng.gen_range(1.0..12.0),
            am_depth: rng.gen_range(0.1..0.9),
        },
    ]
}

/// Multiply every parameter by a log-normal factor for track-level variation.
fn jitter(g: Generator, rng: &mut ChaCha8Rng, spread: f64) -> Generator {
    let n = Normal::new(0.0, spread).expect("valid spread");
    let mut j = |v: f64| v * n.sample(rng).exp();
    match g {
        Generator::Tones {
            f_lo,
            f_hi,
            harmonics,
            tilt,
            note_seconds,
        } => {
            let lo = j(f_lo);
            Generator::Tones {
                f_lo: lo,
                f_hi: lo * (f_hi / f_lo),
                harmonics,
                tilt: j(tilt),
                note_seconds: j(note_seconds),
            }
        }
        Generator::Noise {
            center,
            q,
            gate_hz,
            duty,
        } => Generator::Noise {
            center: j(center),
            q: j(q),
            gate_hz: j(gate_hz),
            duty: j(duty).clamp(0.1, 0.95),
        },
        Generator::Chirp {
            f_lo,
            f_hi,
            sweep_hz,
            am_hz,
            am_depth,
        } => {
            let lo = j(f_lo);
            Generator::Chirp {
                f_lo: lo,
                f_hi: lo * (f_hi / f_lo),
                sweep_hz: j(sweep_hz),
                am_hz: j(am_hz),
                am_depth: j(am_depth).clamp(0.0, 0.95),
            }
        }
    }
}

fn render(g: Generator, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let nyquist = 0.45 * sr;
    let mut out = vec![0.0; n];
    match g {
        Generator::Tones {
            f_lo,
            f_hi,
            harmonics,
            tilt,
            note_seconds,
        } => {
            let note_len = ((note_seconds * sr) as usize).max(1);
            let mut phases = vec![0.0f64; harmonics];
            let mut f0 = f_lo;
            for (i, o) in out.iter_mut().enumerate() {
                let pos = i % note_len;
                if pos == 0 {
                    f0 = log_uniform(rng, f_lo, f_hi.max(f_lo * 1.01));
                }
                let env = (-(pos as f64) / note_len as f64 * 3.0).exp();
                let mut v = 0.0;
                for (h, ph) in phases.iter_mut().enumerate() {
                    let f = f0 * (h + 1) as f64;
                    if f < nyquist {
                        *ph = (*ph + TAU * f / sr) % TAU;
                        v += ph.sin() / ((h + 1) as f64).powf(tilt);
                    }
                }
                *o = env * v;
            }
        }
        Generator::Noise {
            center,
            q,
            gate_hz,
            duty,
        } => {
            // band-pass biquad, constant peak gain
            let w0 = TAU * center.min(nyquist) / sr;
            let alpha = w0.sin() / (2.0 * q);
            let a0 = 1.0 + alpha;
            let (b0, b2) = (alpha / a0, -alpha / a0);
            let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
            let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
            for (i, o) in out.iter_mut().enumerate() {
                let x: f64 = StandardNormal.sample(rng);
                let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = x;
                y2 = y1;
                y1 = y;
                let gate_phase = (i as f64 * gate_hz / sr).fract();
                *o = if gate_phase < duty { y } else { 0.05 * y };
            }
        }
        Generator::Chirp {
            f_lo,
            f_hi,
            sweep_hz,
            am_hz,
            am_depth,
        } => {
            let mut phase = 0.0f64;
            let offset = rng.gen_range(0.0..TAU);
            for (i, o) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let sweep = 0.5 * (1.0 + (TAU * sweep_hz * t + offset).sin());
                let f = (f_lo * (f_hi / f_lo).powf(sweep)).min(nyquist);
                phase = (phase + TAU * f / sr) % TAU;
                let am = 1.0 - am_depth * 0.5 * (1.0 + (TAU * am_hz * t).sin());
                *o = am * phase.sin();
            }
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

fn seed_for(base: u64, a: u64, b: u64) -> u64 {
    base ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

fn render_track(spec: &SyntheticSpec, pal: &[Generator; 3], genre: usize, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(spec.seed, genre as u64 + 1, index as u64 + 1));
    let sr = spec.sample_rate as f64;
    let total = (spec.track_seconds * sr).round() as usize;
    let track_pal: Vec<Generator> = pal.iter().map(|&g| jitter(g, &mut rng, 0.15)).collect();
    let mut samples = Vec::with_capacity(total);
    for s in 0..spec.sections_per_track {
        let end = total * (s + 1) / spec.sections_per_track;
        let len = end - samples.len();
        let g = jitter(*track_pal.choose(&mut rng).expect("palette"), &mut rng, 0.05);
        let gain = rng.gen_range(0.5..1.0);
        samples.extend(render(g, len, sr, &mut rng).into_iter().map(|v| gain * v));
    }
    for v in samples.iter_mut() {
        *v += 0.01 * rng.sample::<f64, _>(StandardNormal);
    }
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        samples.iter_mut().for_each(|v| *v *= 0.8 / peak);
    }
    samples
}

/// Write WAV files and `manifest.csv` under `out_dir`.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let palettes: Vec<[Generator; 3]> = (0..spec.n_genres)
        .map(|g| palette(&mut ChaCha8Rng::seed_from_u64(seed_for(spec.seed, g as u64 + 1, 0))))
        .collect();
    let mut fold_rng = ChaCha8Rng::seed_from_u64(seed_for(spec.seed, 0, 0));
    let mut jobs = Vec::new();
    for g in 0..spec.n_genres {
        let mut order: Vec<usize> = (0..spec.tracks_per_genre).collect();
        order.shuffle(&mut fold_rng);
        let mut folds = vec![0; spec.tracks_per_genre];
        for (pos, &i) in order.iter().enumerate() {
            folds[i] = pos % spec.n_folds;
        }
        jobs.extend((0..spec.tracks_per_genre).map(|i| (g, i, folds[i])));
    }
    info!("rendering {} synthetic tracks", jobs.len());
    let entries = jobs
        .par_iter()
        .map(|&(g, i, fold)| {
            let track_id = format!("g{g}_t{i:03}");
            let path = out_dir.join(format!("genre{g}")).join(format!("{track_id}.wav"));
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let clip = AudioClip::new(render_track(spec, &palettes[g], g, i), spec.sample_rate)?;
            write_audio(&clip, &path)?;
            Ok(ManifestEntry {
                track_id,
                path,
                label: format!("genre{g}"),
                fold,
                artist: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        name: format!("synthetic_{}", spec.seed),
        fold_count: spec.n_folds,
        entries,
    };
    manifest.validate()?;
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Copy every track cut to its middle `seconds`, keeping labels and folds.
pub fn truncate_dataset(manifest: &DatasetManifest, seconds: f64, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    if !(seconds > 0.0) {
        return Err(Error::InvalidParameter("truncation length must be positive".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = manifest
        .entries
        .par_iter()
        .map(|e| {
            let clip = load_audio(&e.path)?;
            let want = ((seconds * clip.sample_rate() as f64).round() as usize).min(clip.len());
            let start = (clip.len() - want) / 2;
            let cut = clip.slice(start, start + want)?;
            let path = out_dir.join(format!("{}.wav", e.track_id));
            write_audio(&cut, &path)?;
            Ok(ManifestEntry {
                path,
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = DatasetManifest {
        name: format!("{}_{}s", manifest.name, seconds),
        fold_count: manifest.fold_count,
        entries,
    };
    out.save(out_dir.join("manifest.csv"))?;
    Ok(out)
}
