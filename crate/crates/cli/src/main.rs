use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use texsel::experiment::{
    compare_selectors, frame_features, generate_synthetic_dataset, load_track, pca_emit, run_experiment,
    summarize_track, train_model, truncate_dataset, write_comparison, write_predictions, write_report, DatasetManifest,
    ExperimentConfig, Extractor, FeatureCache, FeatureSet, Prediction, RunOptions, SyntheticSpec,
};
use texsel::learning::{load_trained_model, predict_track, save_trained_model, weighted_f1};
use texsel::matrix_io::write_feature_csv;
use texsel::selection::SelectorSpec;
use texsel::textures::{add_deltas, texturize};

#[derive(Parser)]
#[command(name = "texsel", version, about = "Bag-of-frames genre classification with texture selection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for cached feature matrices.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache texture matrices for every track in a manifest.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also write each track's textures as CSV here.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
    },
    /// Grid-search and fit one model on the manifest, optionally holding out a fold.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        holdout_fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate a config, or score a saved model with --model.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Report directory, or prediction CSV path with --model.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Only score tracks of this fold (with --model).
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Run several selectors over the same folds and test the differences.
    Compare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, e.g. `kmeansc:5,linspace:5,fts,all`.
        #[arg(long, value_delimiter = ',', required = true)]
        selectors: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic multi-genre dataset and its manifest.
    Synthgen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        genres: usize,
        #[arg(long, default_value_t = 30)]
        tracks: usize,
        #[arg(long, default_value_t = 60.0)]
        seconds: f64,
        #[arg(long, default_value_t = 6)]
        sections: usize,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        #[arg(long, default_value_t = 44_100)]
        sample_rate: u32,
        /// Also write copies cut to the middle N seconds.
        #[arg(long)]
        truncate: Option<f64>,
        #[arg(long, requires = "truncate")]
        truncate_out: Option<PathBuf>,
    },
    /// Build an audio summary from representative textures.
    Summarize {
        #[arg(long)]
        audio: PathBuf,
        /// `kmeansc:K` or `linspace:K`.
        #[arg(long, default_value = "kmeansc:5")]
        selector: String,
        /// Feature settings; defaults to handcrafted features.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write PCA projections of texture matrices as CSV.
    Pca {
        #[arg(long, conflicts_with = "audio")]
        manifest: Option<PathBuf>,
        /// Restrict to these track ids.
        #[arg(long, value_delimiter = ',')]
        tracks: Vec<String>,
        #[arg(long, num_args = 1..)]
        audio: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut c = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(FeatureSet::Handcrafted, SelectorSpec::all()),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn parse_selector(s: &str, seed: u64) -> Result<SelectorSpec> {
    let spec: SelectorSpec = s.parse()?;
    Ok(SelectorSpec { seed, ..spec })
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let opts = RunOptions {
        cache_dir: g.cache_dir.clone(),
        jobs: g.jobs,
    };
    match cli.command {
        Command::Extract {
            manifest,
            config,
            csv_dir,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let c = load_config(Some(&config), g.seed)?;
            if matches!(c.features, FeatureSet::MelAe { .. }) {
                bail!("MEL-AE features are learned per fold; run `evaluate` instead");
            }
            let cache = FeatureCache::new(opts.cache_dir.clone())?;
            let ex = Extractor::new(&m, &c, &cache)?;
            let rows: Vec<usize> = (0..m.entries.len()).collect();
            let textures = ex.textures_for(&rows, None)?;
            ex.write_index()?;
            if let Some(dir) = csv_dir {
                std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for t in &textures {
                    let fm = texsel::features::FeatureMatrix::from(t);
                    write_feature_csv(&fm, dir.join(format!("{}.csv", t.track_id)))?;
                }
            }
            println!("extracted {} tracks, texture dimension {}", textures.len(), textures[0].dim());
        }
        Command::Train {
            manifest,
            config,
            holdout_fold,
            out,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let c = load_config(Some(&config), g.seed)?;
            let (model, _, best) = train_model(&m, &c, holdout_fold, &opts)?;
            save_trained_model(&model, &out, &m.label_names())?;
            println!(
                "saved {} ({}, fraction {}, validation F1 {:.4})",
                out.display(),
                best.classifier,
                best.fraction,
                best.validation_f1
            );
        }
        Command::Evaluate {
            manifest,
            config,
            out,
            model,
            fold,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let c = load_config(Some(&config), g.seed)?;
            match model {
                Some(path) => evaluate_model(&m, &c, &path, fold, &out, &opts)?,
                None => {
                    let report = run_experiment(&m, &c, &opts)?;
                    write_report(&report, &out)?;
                    println!(
                        "{} {}: mean F1 {:.4} (std {:.4}); report in {}",
                        report.feature_set,
                        report.selector,
                        report.mean_f1,
                        report.std_f1,
                        out.display()
                    );
                }
            }
        }
        Command::Compare {
            manifest,
            config,
            selectors,
            out,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let c = load_config(Some(&config), g.seed)?;
            let specs = selectors
                .iter()
                .map(|s| parse_selector(s, c.seed))
                .collect::<Result<Vec<_>>>()?;
            let (cmp, reports) = compare_selectors(&m, &c, &specs, &opts)?;
            write_comparison(&cmp, &reports, &out)?;
            for r in &cmp.selectors {
                println!("{:<12} F1 {:.4} ± {:.4}", r.selector, r.mean_f1, r.std_f1);
            }
        }
        Command::Synthgen {
            out,
            genres,
            tracks,
            seconds,
            sections,
            folds,
            sample_rate,
            truncate,
            truncate_out,
        } => {
            let spec = SyntheticSpec {
                n_folds: folds,
                sample_rate,
                ..SyntheticSpec::new(genres, tracks, seconds, sections, g.seed.unwrap_or(7))
            };
            let m = generate_synthetic_dataset(&spec, &out)?;
            println!("wrote {} tracks to {}", m.entries.len(), out.display());
            if let Some(secs) = truncate {
                let dir = truncate_out.unwrap_or_else(|| out.join(format!("short_{secs}s")));
                truncate_dataset(&m, secs, &dir)?;
                println!("wrote {secs} s excerpts to {}", dir.display());
            }
        }
        Command::Summarize {
            audio,
            selector,
            config,
            out,
        } => {
            let c = load_config(config.as_deref(), g.seed)?;
            let sel = parse_selector(&selector, c.seed)?;
            let raw = texsel::audio_io::load_audio(&audio)?;
            let clip = load_track(&audio)?;
            let frames = add_deltas(&frame_features(&clip, &c)?)?;
            let tex = texturize(&frames, c.textures, "input", None)?;
            let summary = summarize_track(&tex, &raw, &sel, c.textures, c.frames)?;
            let clipped = texsel::audio_io::write_audio(&summary, &out)?;
            if clipped > 0 {
                log::warn!("{clipped} samples clipped");
            }
            println!("wrote {:.2} s summary to {}", summary.duration(), out.display());
        }
        Command::Pca {
            manifest,
            tracks,
            audio,
            config,
            components,
            out,
        } => {
            let c = load_config(config.as_deref(), g.seed)?;
            let (textures, names) = match manifest {
                Some(path) => {
                    let mut m = DatasetManifest::load(&path)?;
                    let names = m.label_names();
                    if !tracks.is_empty() {
                        m.entries.retain(|e| tracks.contains(&e.track_id));
                        if m.entries.is_empty() {
                            bail!("none of the requested tracks are in the manifest");
                        }
                    }
                    let cache = FeatureCache::new(opts.cache_dir.clone())?;
                    let ex = Extractor::new(&m, &c, &cache)?;
                    let mut t = ex.textures_for(&(0..m.entries.len()).collect::<Vec<_>>(), None)?;
                    // label ids from the filtered manifest refer to its own label list
                    let sub_names = m.label_names();
                    for tm in &mut t {
                        tm.label = tm.label.map(|l| names.binary_search(&sub_names[l]).expect("label present"));
                    }
                    (t, names)
                }
                None if !audio.is_empty() => {
                    let t = audio
                        .iter()
                        .map(|p| {
                            let clip = load_track(p)?;
                            let frames = add_deltas(&frame_features(&clip, &c)?)?;
                            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                            Ok(texturize(&frames, c.textures, &id, None)?)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (t, Vec::new())
                }
                None => bail!("give --manifest or --audio"),
            };
            let pca = pca_emit(&textures, &names, components, &out)?;
            println!(
                "wrote {} components for {} textures to {}",
                pca.components.ncols(),
                textures.iter().map(|t| t.n_textures()).sum::<usize>(),
                out.display()
            );
        }
    }
    Ok(())
}

fn evaluate_model(
    m: &DatasetManifest,
    c: &ExperimentConfig,
    model_path: &Path,
    fold: Option<usize>,
    out: &Path,
    opts: &RunOptions,
) -> Result<()> {
    let (model, model_names) = load_trained_model(model_path)?;
    let rows: Vec<usize> = (0..m.entries.len())
        .filter(|&i| fold.map_or(true, |f| m.entries[i].fold == f))
        .collect();
    if rows.is_empty() {
        bail!("no tracks to evaluate");
    }
    let cache = FeatureCache::new(opts.cache_dir.clone())?;
    let ex = Extractor::new(m, c, &cache)?;
    let textures = ex.textures_for(&rows, None)?;
    let names = if model_names.is_empty() { m.label_names() } else { model_names };
    let mut preds = Vec::with_capacity(rows.len());
    let (mut y_true, mut y_pred) = (Vec::new(), Vec::new());
    for (t, &i) in textures.iter().zip(&rows) {
        let v = predict_track(&model, t)?;
        let truth = &m.entries[i].label;
        let id = names
            .iter()
            .position(|n| n == truth)
            .ok_or_else(|| anyhow!("label '{truth}' is unknown to the model"))?;
        y_true.push(id);
        y_pred.push(v.final_label);
        preds.push(Prediction {
            track_id: t.track_id.clone(),
            true_label: truth.clone(),
            predicted_label: names.get(v.final_label).cloned().unwrap_or_else(|| v.final_label.to_string()),
            tie_broken: v.tie_broken,
        });
    }
    write_predictions(&preds, out)?;
    info!("scored {} tracks", rows.len());
    println!("weighted F1 {:.4} over {} tracks; predictions in {}", weighted_f1(&y_true, &y_pred)?, rows.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
