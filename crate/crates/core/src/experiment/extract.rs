//! Per-track feature extraction with a content-addressed on-disk cache.

use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::path::{Path, PathBuf};

use log::{debug, info};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, FeatureSet};
use super::manifest::DatasetManifest;
use crate::audio_io::{load_audio, standardize_signal, AudioClip};
use crate::autoencoder::{encode, train_autoencoder, AEModel};
use crate::error::{Error, Result};
use crate::features::{
    apply_projection, handcrafted_frame_features, make_projection, mel_frame_features, FeatureMatrix, FeatureSource,
    N_MELS,
};
use crate::learning::{fit_standardizer, Standardizer};
use crate::matrix_io::{read_feature_bin, round_to_f32, write_feature_bin, CacheEntry, CacheIndex};
use crate::selection::SelectorKind;
use crate::textures::{add_deltas, full_track_statistics, texture_names, texturize, TextureMatrix};

const CACHE_VERSION: &str = "texsel-cache-1";

/// Cache of feature matrices keyed by content hash. A cache without a
/// directory computes every request.
#[derive(Debug, Clone, Default)]
pub struct FeatureCache {
    dir: Option<PathBuf>,
}

impl FeatureCache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Self { dir })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn entry_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.tsfm")))
    }

    /// Values are always rounded to `f32`, so a hit equals a fresh computation bitwise.
    pub fn get_or_compute(&self, key: &str, compute: impl FnOnce() -> Result<FeatureMatrix>) -> Result<FeatureMatrix> {
        let path = self.entry_path(key);
        if let Some(p) = &path {
            if p.exists() {
                debug!("cache hit {key}");
                return read_feature_bin(p).map_err(|e| Error::Format(format!("cache entry {}: {e}", p.display())));
            }
        }
        let mut fm = compute()?;
        round_to_f32(&mut fm.values);
        if let Some(p) = &path {
            // unique per writer, so concurrent runs sharing a cache never collide
            static NEXT: AtomicUsize = AtomicUsize::new(0);
            let n = NEXT.fetch_add(1, Ordering::Relaxed);
            let tmp = p.with_extension(format!("tmp{}.{n}", std::process::id()));
            write_feature_bin(&fm, &tmp)?;
            fs::rename(&tmp, p).map_err(|e| Error::io(p, e))?;
        }
        Ok(fm)
    }
}

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

pub fn audio_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_digest(&[&bytes]))
}

fn cache_key(stage: &str, audio: &str, subtree: &impl Serialize) -> String {
    let json = serde_json::to_vec(subtree).expect("config subtree serializes");
    hex_digest(&[CACHE_VERSION.as_bytes(), stage.as_bytes(), audio.as_bytes(), &json])
}

/// Decode and z-score a track.
pub fn load_track(path: &Path) -> Result<AudioClip> {
    standardize_signal(&load_audio(path)?).map_err(|e| match e {
        Error::ZeroVariance => Error::UnreadableAudio {
            path: path.to_path_buf(),
            reason: "signal is constant".into(),
        },
        other => other,
    })
}

/// Frame features of a non-learned feature set, before deltas.
pub fn frame_features(clip: &AudioClip, config: &ExperimentConfig) -> Result<FeatureMatrix> {
    match config.features {
        FeatureSet::Handcrafted => handcrafted_frame_features(clip, config.frames),
        FeatureSet::MelSpec => mel_frame_features(clip, config.frames),
        FeatureSet::MelRp { m } => {
            let mel = mel_frame_features(clip, config.frames)?;
            apply_projection(&mel, &make_projection(N_MELS, m, config.seed)?)
        }
        FeatureSet::MelAe { .. } => Err(Error::InvalidParameter(
            "autoencoder features need a trained model".into(),
        )),
    }
}

/// Textures for the configured selector; FTS gets a single full-track row.
pub fn textures_from_frames(
    frames: &FeatureMatrix,
    config: &ExperimentConfig,
    track_id: &str,
    label: Option<usize>,
) -> Result<TextureMatrix> {
    let with_deltas = add_deltas(frames)?;
    if config.selector.kind == SelectorKind::Fts {
        full_track_statistics(&with_deltas, track_id, label)
    } else {
        texturize(&with_deltas, config.textures, track_id, label)
    }
}

fn as_feature_matrix(t: &TextureMatrix, frame_names: &[String]) -> Result<FeatureMatrix> {
    let with_deltas: Vec<String> = frame_names
        .iter()
        .cloned()
        .chain(frame_names.iter().map(|n| format!("d_{n}")))
        .chain(frame_names.iter().map(|n| format!("dd_{n}")))
        .collect();
    FeatureMatrix::new(t.values.clone(), texture_names(&with_deltas), FeatureSource::Texture)
}

#[derive(Serialize)]
struct TextureSubtree<'a> {
    features: FeatureSet,
    frames: crate::dsp::FrameParams,
    textures: crate::textures::TextureParams,
    full_track: bool,
    projection_seed: Option<u64>,
    model: Option<&'a str>,
}

fn texture_subtree<'a>(config: &ExperimentConfig, model: Option<&'a str>) -> TextureSubtree<'a> {
    let full_track = config.selector.kind == SelectorKind::Fts;
    TextureSubtree {
        features: config.features,
        frames: config.frames,
        textures: config.textures,
        full_track,
        projection_seed: matches!(config.features, FeatureSet::MelRp { .. }).then_some(config.seed),
        model,
    }
}

/// Autoencoder trained on one fold's training frames, with the frame standardizer it expects.
pub struct FoldEncoder {
    pub standardizer: Standardizer,
    pub model: AEModel,
    pub digest: String,
}

impl FoldEncoder {
    fn encode_frames(&self, mel: &FeatureMatrix) -> Result<FeatureMatrix> {
        let z = self.standardizer.transform(mel.values.view())?;
        encode(&self.model, &FeatureMatrix::new(z, mel.names.clone(), FeatureSource::MelSpec)?)
    }
}

fn model_digest(st: &Standardizer, m: &AEModel) -> String {
    let mut bytes = Vec::new();
    for block in [&st.means[..], &st.stds[..]] {
        bytes.extend(block.iter().flat_map(|v| v.to_le_bytes()));
    }
    for w in [&m.w1, &m.w2] {
        bytes.extend(w.iter().flat_map(|v| v.to_le_bytes()));
    }
    for b in [&m.b1, &m.b2] {
        bytes.extend(b.iter().flat_map(|v| v.to_le_bytes()));
    }
    hex_digest(&[&bytes])
}

/// Reads audio once per track and serves cached stages.
pub struct Extractor<'a> {
    pub manifest: &'a DatasetManifest,
    pub config: &'a ExperimentConfig,
    pub cache: &'a FeatureCache,
    digests: Vec<String>,
    labels: Vec<usize>,
}

impl<'a> Extractor<'a> {
    pub fn new(manifest: &'a DatasetManifest, config: &'a ExperimentConfig, cache: &'a FeatureCache) -> Result<Self> {
        let digests = manifest
            .entries
            .par_iter()
            .map(|e| audio_digest(&e.path))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest,
            config,
            cache,
            digests,
            labels: manifest.label_ids(),
        })
    }

    fn mel_frames(&self, i: usize) -> Result<FeatureMatrix> {
        let e = &self.manifest.entries[i];
        let key = cache_key("mel", &self.digests[i], &self.config.frames);
        self.cache
            .get_or_compute(&key, || mel_frame_features(&load_track(&e.path)?, self.config.frames))
    }

    fn texture_key(&self, i: usize, model: Option<&str>) -> String {
        cache_key("textures", &self.digests[i], &texture_subtree(self.config, model))
    }

    fn textures(&self, i: usize, encoder: Option<&FoldEncoder>) -> Result<TextureMatrix> {
        let e = &self.manifest.entries[i];
        let key = self.texture_key(i, encoder.map(|m| m.digest.as_str()));
        let fm = self.cache.get_or_compute(&key, || {
            let frames = match encoder {
                Some(enc) => enc.encode_frames(&self.mel_frames(i)?)?,
                None => frame_features(&load_track(&e.path)?, self.config)?,
            };
            let t = textures_from_frames(&frames, self.config, &e.track_id, None)?;
            as_feature_matrix(&t, &frames.names)
        });
        let fm = fm.map_err(|err| Error::Format(format!("track '{}': {err}", e.track_id)))?;
        TextureMatrix::new(fm.values, e.track_id.clone(), Some(self.labels[i]))
    }

    /// Texture matrices for the given manifest rows, in order.
    pub fn textures_for(&self, rows: &[usize], encoder: Option<&FoldEncoder>) -> Result<Vec<TextureMatrix>> {
        if matches!(self.config.features, FeatureSet::MelAe { .. }) && encoder.is_none() {
            return Err(Error::InvalidParameter("MEL-AE textures need a fold encoder".into()));
        }
        rows.par_iter().map(|&i| self.textures(i, encoder)).collect()
    }

    /// Train the fold autoencoder on the mel frames of `train_rows` only.
    pub fn fold_encoder(&self, train_rows: &[usize], hidden: usize, seed: u64) -> Result<FoldEncoder> {
        let mels = train_rows
            .par_iter()
            .map(|&i| self.mel_frames(i))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = mels.iter().map(|m| m.values.view()).collect();
        let stacked: Array2<f64> =
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?;
        drop(mels);
        let standardizer = fit_standardizer(stacked.view())?;
        let z = standardizer.transform(stacked.view())?;
        let names = (0..z.ncols()).map(|i| format!("mel{i}")).collect();
        let hp = crate::autoencoder::AEHyperparams {
            seed,
            ..self.config.autoencoder
        };
        info!("training autoencoder H={hidden} on {} frames", z.nrows());
        let model = train_autoencoder(&FeatureMatrix::new(z, names, FeatureSource::MelSpec)?, hidden, hp)?;
        let digest = model_digest(&standardizer, &model);
        Ok(FoldEncoder {
            standardizer,
            model,
            digest,
        })
    }

    /// Record the texture cache keys of every track in the cache index.
    pub fn write_index(&self) -> Result<()> {
        let Some(dir) = self.cache.dir() else {
            return Ok(());
        };
        if matches!(self.config.features, FeatureSet::MelAe { .. }) {
            return Ok(());
        }
        let mut index = CacheIndex::load(dir)?;
        for (i, e) in self.manifest.entries.iter().enumerate() {
            index.entries.insert(
                e.track_id.clone(),
                CacheEntry {
                    key: self.texture_key(i, None),
                    label: Some(self.labels[i]),
                },
            );
        }
        index.save(dir)
    }
}
