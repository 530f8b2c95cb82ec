use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use log::{info, warn};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FeatureSet, SplitMode};
use super::extract::{Extractor, FeatureCache};
use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::learning::{
    confusion_matrix, fit_standardizer, predict_track, weighted_f1, ClassifierParams, Label, Standardizer,
    TrainedModel,
};
use crate::selection::{select, SelectorKind, SelectorSpec};
use crate::textures::TextureMatrix;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub cache_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub track_id: String,
    pub true_label: String,
    pub predicted_label: String,
    pub tie_broken: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub classifier: ClassifierParams,
    pub fraction: f64,
    pub validation_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSummary {
    pub training_rows: usize,
    pub initial_mse: f64,
    pub final_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_tracks: usize,
    pub test_tracks: usize,
    /// Training textures before selection.
    pub train_textures: usize,
    pub selected_train_textures: usize,
    pub selected_test_textures: usize,
    /// Training rows before subsampling, when the cap was hit.
    pub capped_from: Option<usize>,
    pub grid: Vec<GridPoint>,
    pub chosen: ClassifierParams,
    pub chosen_fraction: f64,
    pub kept_features: usize,
    pub validation_f1: f64,
    pub f1: f64,
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<Prediction>,
    pub autoencoder: Option<EncoderSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub base: u64,
    pub split: u64,
    pub kmeans: Vec<u64>,
    pub projection: Option<u64>,
    pub autoencoder: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub extract_seconds: f64,
    pub fold_seconds: Vec<f64>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub dataset: String,
    pub feature_set: String,
    pub selector: String,
    pub multiclass: String,
    pub validation: SplitMode,
    pub label_names: Vec<String>,
    pub texture_dim: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub folds: Vec<FoldReport>,
    /// Mean F1 of every K-Means seeding; `reported_run` indexes the median.
    pub run_mean_f1: Vec<f64>,
    pub reported_run: usize,
    pub artist_filter_ok: Option<bool>,
    pub seeds: Seeds,
    pub config: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl ExperimentReport {
    pub fn per_fold_f1(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.f1).collect()
    }

    /// Pretty JSON without timing fields; identical seeds give identical text.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.timings = None;
        serde_json::to_string_pretty(&r).expect("report serializes")
    }
}

const SPLIT_SALT: u64 = 0x5b1f_0000;
const CAP_SALT: u64 = 0xca90_0000;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn stack_rows(tracks: &[TextureMatrix]) -> Result<(Array2<f64>, Vec<Label>)> {
    let views: Vec<_> = tracks.iter().map(|t| t.values.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?;
    let y = tracks
        .iter()
        .flat_map(|t| std::iter::repeat(t.label.expect("labelled track")).take(t.n_textures()))
        .collect();
    Ok((x, y))
}

/// Per-label pseudo-tracks holding the given rows.
fn group_by_label(x: &Array2<f64>, y: &[Label], rows: &[usize]) -> Vec<TextureMatrix> {
    let mut by: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        by.entry(y[r]).or_default().push(r);
    }
    by.into_iter()
        .map(|(l, idx)| TextureMatrix::from_parts(x.select(Axis(0), &idx), format!("label{l}"), Some(l)))
        .collect()
}

/// Stratified subsample to at most `cap` rows; returns the original row count when applied.
fn apply_cap(tracks: Vec<TextureMatrix>, cap: usize, seed: u64) -> Result<(Vec<TextureMatrix>, Option<usize>)> {
    let total: usize = tracks.iter().map(|t| t.n_textures()).sum();
    if total <= cap {
        return Ok((tracks, None));
    }
    let (x, y) = stack_rows(&tracks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, &l) in y.iter().enumerate() {
        by.entry(l).or_default().push(i);
    }
    let mut keep = Vec::with_capacity(cap);
    for idx in by.values_mut() {
        let n = ((idx.len() as u128 * cap as u128) / total as u128).max(1) as usize;
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..n.min(idx.len())]);
    }
    keep.sort_unstable();
    warn!("training textures capped from {total} to {}", keep.len());
    Ok((group_by_label(&x, &y, &keep), Some(total)))
}

struct ValidationSplit {
    train: Vec<TextureMatrix>,
    x: Array2<f64>,
    y: Vec<Label>,
}

fn split_validation(selected: &[TextureMatrix], config: &ExperimentConfig, seed: u64) -> Result<ValidationSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frac = config.validation_split;
    match config.split {
        SplitMode::Track => {
            let mut by: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
            for (i, t) in selected.iter().enumerate() {
                by.entry(t.label.expect("labelled track")).or_default().push(i);
            }
            let mut val = Vec::new();
            for idx in by.values_mut() {
                if idx.len() < 2 {
                    continue;
                }
                idx.shuffle(&mut rng);
                let n = ((idx.len() as f64 * frac).round() as usize).clamp(1, idx.len() - 1);
                val.extend_from_slice(&idx[..n]);
            }
            if val.is_empty() {
                return Err(Error::EmptyInput("too few training tracks for a validation split".into()));
            }
            val.sort_unstable();
            let train = (0..selected.len())
                .filter(|i| val.binary_search(i).is_err())
                .map(|i| selected[i].clone())
                .collect();
            let held: Vec<TextureMatrix> = val.iter().map(|&i| selected[i].clone()).collect();
            let (x, y) = stack_rows(&held)?;
            Ok(ValidationSplit { train, x, y })
        }
        SplitMode::Texture => {
            let (x, y) = stack_rows(selected)?;
            let mut idx: Vec<usize> = (0..x.nrows()).collect();
            idx.shuffle(&mut rng);
            let n = ((idx.len() as f64 * frac).round() as usize).clamp(1, idx.len().saturating_sub(1).max(1));
            let (val, rest) = idx.split_at(n);
            let mut val = val.to_vec();
            val.sort_unstable();
            let mut rest = rest.to_vec();
            rest.sort_unstable();
            Ok(ValidationSplit {
                train: group_by_label(&x, &y, &rest),
                x: x.select(Axis(0), &val),
                y: val.iter().map(|&i| y[i]).collect(),
            })
        }
    }
}

fn standardize_and_select(t: &TextureMatrix, st: &Standardizer, selector: &SelectorSpec) -> Result<TextureMatrix> {
    let z = TextureMatrix::from_parts(st.transform(t.values.view())?, t.track_id.clone(), t.label);
    select(&z, selector)
}

/// Validation search over (classifier × ANOVA fraction); ties keep the earlier grid point.
fn grid_search(
    selected: &[TextureMatrix],
    standardizer: &Standardizer,
    selector: &SelectorSpec,
    config: &ExperimentConfig,
    fold: usize,
) -> Result<(Vec<GridPoint>, GridPoint)> {
    let split_seed = config.seed ^ SPLIT_SALT ^ fold as u64;
    let split = split_validation(selected, config, split_seed)?;
    let (sub_train, _) = apply_cap(split.train, config.all_cap, config.seed ^ CAP_SALT ^ fold as u64)?;
    let sub_rows: usize = sub_train.iter().map(|t| t.n_textures()).sum();

    let mut grid_specs = Vec::new();
    for &fraction in &config.anova_fractions {
        for params in config.classifiers.params() {
            if let ClassifierParams::Knn { k } = params {
                if k > sub_rows {
                    warn!("fold {fold}: skipping K={k} with {sub_rows} training rows");
                    continue;
                }
            }
            grid_specs.push((params, fraction));
        }
    }
    let grid: Vec<GridPoint> = grid_specs
        .par_iter()
        .map(|&(params, fraction)| {
            let model = TrainedModel::fit(&sub_train, standardizer.clone(), *selector, fraction, params)?;
            let xm = model.mask.apply(split.x.view())?;
            let pred: Vec<Label> = model.classifier.predict(xm.view())?.into_iter().map(|p| p.0).collect();
            Ok(GridPoint {
                classifier: params,
                fraction,
                validation_f1: weighted_f1(&split.y, &pred)?,
            })
        })
        .collect::<Result<_>>()?;
    let best = grid
        .iter()
        .fold(None::<&GridPoint>, |acc, g| match acc {
            Some(a) if a.validation_f1 >= g.validation_f1 => Some(a),
            _ => Some(g),
        })
        .ok_or_else(|| Error::EmptyInput("no usable grid points".into()))?
        .clone();
    info!(
        "fold {fold}: chose {} with fraction {} (validation F1 {:.4})",
        best.classifier, best.fraction, best.validation_f1
    );
    Ok((grid, best))
}

struct FoldInput<'a> {
    fold: usize,
    train: Vec<&'a TextureMatrix>,
    test: Vec<&'a TextureMatrix>,
}

fn run_fold(
    input: FoldInput<'_>,
    config: &ExperimentConfig,
    selector: &SelectorSpec,
    label_names: &[String],
) -> Result<FoldReport> {
    let FoldInput { fold, train, test } = input;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput(format!("fold {fold} has no training or no test tracks")));
    }
    let train_views: Vec<_> = train.iter().map(|t| t.values.view()).collect();
    let stacked = ndarray::concatenate(Axis(0), &train_views).map_err(|e| Error::Format(e.to_string()))?;
    let standardizer = fit_standardizer(stacked.view())?;
    let train_textures = stacked.nrows();
    drop(stacked);

    let selected: Vec<TextureMatrix> = train
        .par_iter()
        .map(|t| standardize_and_select(t, &standardizer, selector))
        .collect::<Result<_>>()?;
    let selected_train_textures = selected.iter().map(|t| t.n_textures()).sum();

    let (grid, best) = grid_search(&selected, &standardizer, selector, config, fold)?;
    let (full_train, capped_from) = apply_cap(selected, config.all_cap, config.seed ^ CAP_SALT ^ fold as u64 ^ 1)?;
    let model = TrainedModel::fit(&full_train, standardizer, *selector, best.fraction, best.classifier)?;
    drop(full_train);

    let votes = test
        .par_iter()
        .map(|t| predict_track(&model, t))
        .collect::<Result<Vec<_>>>()?;
    let y_true: Vec<Label> = test.iter().map(|t| t.label.expect("labelled track")).collect();
    let y_pred: Vec<Label> = votes.iter().map(|v| v.final_label).collect();
    let predictions = test
        .iter()
        .zip(&votes)
        .map(|(t, v)| Prediction {
            track_id: t.track_id.clone(),
            true_label: label_names[t.label.expect("labelled track")].clone(),
            predicted_label: label_names[v.final_label].clone(),
            tie_broken: v.tie_broken,
        })
        .collect();
    Ok(FoldReport {
        fold,
        train_tracks: train.len(),
        test_tracks: test.len(),
        train_textures,
        selected_train_textures,
        selected_test_textures: votes.iter().map(|v| v.per_texture_labels.len()).sum(),
        capped_from,
        grid,
        chosen: best.classifier,
        chosen_fraction: best.fraction,
        kept_features: model.mask.len(),
        validation_f1: best.validation_f1,
        f1: weighted_f1(&y_true, &y_pred)?,
        confusion: confusion_matrix(&y_true, &y_pred, label_names.len())?,
        predictions,
        autoencoder: None,
    })
}

/// Cross-validate the configured pipeline over the manifest's folds.
pub fn run_experiment(manifest: &DatasetManifest, config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(manifest, config, opts))
}

fn run_inner(manifest: &DatasetManifest, config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport> {
    let start = Instant::now();
    config.validate()?;
    manifest.validate()?;
    let artist_filter_ok = manifest.has_artists().then(|| {
        let bad = manifest.artist_violations();
        if !bad.is_empty() {
            warn!("artists spanning folds: {}", bad.join(", "));
        }
        bad.is_empty()
    });
    let label_names = manifest.label_names();
    let cache = FeatureCache::new(opts.cache_dir.clone())?;
    let extractor = Extractor::new(manifest, config, &cache)?;
    let all_rows: Vec<usize> = (0..manifest.entries.len()).collect();
    let ae_hidden = match config.features {
        FeatureSet::MelAe { h } => Some(h),
        _ => None,
    };

    let t0 = Instant::now();
    let shared = match ae_hidden {
        None => {
            let t = extractor.textures_for(&all_rows, None)?;
            extractor.write_index()?;
            Some(t)
        }
        Some(_) => None,
    };
    let mut extract_seconds = t0.elapsed().as_secs_f64();

    let runs = if config.selector.kind == SelectorKind::Kmeansc {
        config.kmeans_runs
    } else {
        1
    };
    let kmeans_seeds: Vec<u64> = (0..runs as u64).map(|r| config.seed.wrapping_add(r)).collect();
    let mut run_reports: Vec<Vec<FoldReport>> = Vec::with_capacity(runs);
    let mut fold_seconds = vec![0.0; manifest.fold_count];
    let mut texture_dim = 0;
    let mut fold_textures: BTreeMap<usize, (Vec<TextureMatrix>, EncoderSummary)> = BTreeMap::new();

    for &kseed in &kmeans_seeds {
        let selector = SelectorSpec {
            seed: kseed,
            ..config.selector
        };
        let mut folds = Vec::with_capacity(manifest.fold_count);
        for fold in 0..manifest.fold_count {
            let (train_rows, test_rows) = manifest.fold_split(fold);
            let tf = Instant::now();
            let (textures, encoder) = match (&shared, ae_hidden) {
                (Some(t), _) => (t, None),
                (None, Some(h)) => {
                    if !fold_textures.contains_key(&fold) {
                        let te = Instant::now();
                        let enc = extractor.fold_encoder(&train_rows, h, config.seed.wrapping_add(fold as u64))?;
                        let t = extractor.textures_for(&all_rows, Some(&enc))?;
                        let summary = EncoderSummary {
                            training_rows: enc.model.training_rows,
                            initial_mse: enc.model.initial_mse,
                            final_mse: *enc.model.training_log.last().unwrap_or(&f64::NAN),
                        };
                        fold_textures.insert(fold, (t, summary));
                        extract_seconds += te.elapsed().as_secs_f64();
                    }
                    let (t, s) = &fold_textures[&fold];
                    (t, Some(s.clone()))
                }
                (None, None) => unreachable!("textures are shared unless features are learned"),
            };
            texture_dim = textures.first().map_or(0, |t| t.dim());
            let input = FoldInput {
                fold,
                train: train_rows.iter().map(|&i| &textures[i]).collect(),
                test: test_rows.iter().map(|&i| &textures[i]).collect(),
            };
            let mut report = run_fold(input, config, &selector, &label_names)?;
            report.autoencoder = encoder;
            info!("fold {fold}: test F1 {:.4}", report.f1);
            fold_seconds[fold] += tf.elapsed().as_secs_f64();
            folds.push(report);
        }
        run_reports.push(folds);
    }

    let run_mean_f1: Vec<f64> = run_reports
        .iter()
        .map(|folds| mean_std(&folds.iter().map(|f| f.f1).collect::<Vec<_>>()).0)
        .collect();
    let mut order: Vec<usize> = (0..runs).collect();
    order.sort_by(|&a, &b| run_mean_f1[a].total_cmp(&run_mean_f1[b]).then(a.cmp(&b)));
    let reported_run = order[(runs - 1) / 2];
    let folds = run_reports.swap_remove(reported_run);
    let (mean_f1, std_f1) = mean_std(&folds.iter().map(|f| f.f1).collect::<Vec<_>>());
    Ok(ExperimentReport {
        dataset: manifest.name.clone(),
        feature_set: config.features.to_string(),
        selector: config.selector.to_string(),
        multiclass: "one-vs-one".into(),
        validation: config.split,
        label_names,
        texture_dim,
        mean_f1,
        std_f1,
        folds,
        run_mean_f1,
        reported_run,
        artist_filter_ok,
        seeds: Seeds {
            base: config.seed,
            split: config.seed ^ SPLIT_SALT,
            kmeans: if config.selector.kind == SelectorKind::Kmeansc {
                kmeans_seeds
            } else {
                Vec::new()
            },
            projection: matches!(config.features, FeatureSet::MelRp { .. }).then_some(config.seed),
            autoencoder: ae_hidden.map(|_| config.seed),
        },
        config: config.echo(),
        timings: Some(Timings {
            extract_seconds,
            fold_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        }),
    })
}

/// Fit on every track outside `holdout_fold`; returns the model, the validation grid and its best point.
pub fn train_model(
    manifest: &DatasetManifest,
    config: &ExperimentConfig,
    holdout_fold: Option<usize>,
    opts: &RunOptions,
) -> Result<(TrainedModel, Vec<GridPoint>, GridPoint)> {
    if matches!(config.features, FeatureSet::MelAe { .. }) {
        return Err(Error::InvalidParameter(
            "standalone models support fixed feature sets only".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        config.validate()?;
        let cache = FeatureCache::new(opts.cache_dir.clone())?;
        let extractor = Extractor::new(manifest, config, &cache)?;
        let rows: Vec<usize> = (0..manifest.entries.len())
            .filter(|&i| Some(manifest.entries[i].fold) != holdout_fold)
            .collect();
        let textures = extractor.textures_for(&rows, None)?;
        extractor.write_index()?;
        let selector = SelectorSpec {
            seed: config.seed,
            ..config.selector
        };
        let views: Vec<_> = textures.iter().map(|t| t.values.view()).collect();
        let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?;
        let standardizer = fit_standardizer(stacked.view())?;
        let selected: Vec<TextureMatrix> = textures
            .par_iter()
            .map(|t| standardize_and_select(t, &standardizer, &selector))
            .collect::<Result<_>>()?;
        let fold = holdout_fold.unwrap_or(usize::MAX);
        let (grid, best) = grid_search(&selected, &standardizer, &selector, config, fold)?;
        let (full, _) = apply_cap(selected, config.all_cap, config.seed ^ CAP_SALT ^ fold as u64 ^ 1)?;
        let model = TrainedModel::fit(&full, standardizer, selector, best.fraction, best.classifier)?;
        Ok((model, grid, best))
    })
}
