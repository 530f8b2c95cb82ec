use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::manifest::DatasetManifest;
use super::run::{run_experiment, ExperimentReport, Prediction, RunOptions};
use crate::error::{Error, Result};
use crate::learning::paired_t_test;
use crate::selection::{SelectorKind, SelectorSpec};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn figure_rows(w: &mut csv::Writer<fs::File>, feature_set: &str, selector: &str, mean: f64, std: f64) -> Result<()> {
    w.write_record([feature_set, selector, &format!("{mean:.6}"), &format!("{std:.6}")])?;
    Ok(())
}

pub fn report_markdown(r: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} / {} / {}\n", r.dataset, r.feature_set, r.selector);
    let _ = writeln!(s, "Mean weighted F1: **{:.4}** (std {:.4}) over {} folds\n", r.mean_f1, r.std_f1, r.folds.len());
    let _ = writeln!(
        s,
        "Texture dimension {}. Multiclass SVM: {}. Validation split: {:?}.\n",
        r.texture_dim, r.multiclass, r.validation
    );
    if r.run_mean_f1.len() > 1 {
        let _ = writeln!(s, "K-Means runs (mean F1): {:?}; reporting run {}.\n", r.run_mean_f1, r.reported_run);
    }
    if let Some(ok) = r.artist_filter_ok {
        let _ = writeln!(s, "Artist filter holds: {ok}\n");
    }
    s.push_str("| fold | train tracks | test tracks | train textures | selected | classifier | fraction | features | val F1 | test F1 |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for f in &r.folds {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {}{} | {} | {} | {} | {:.4} | {:.4} |",
            f.fold,
            f.train_tracks,
            f.test_tracks,
            f.train_textures,
            f.selected_train_textures,
            f.capped_from.map(|_| " (capped)").unwrap_or(""),
            f.chosen,
            f.chosen_fraction,
            f.kept_features,
            f.validation_f1,
            f.f1
        );
    }
    for f in &r.folds {
        let _ = writeln!(s, "\n## Fold {} confusion (rows true, columns predicted)\n", f.fold);
        let _ = writeln!(s, "| | {} |", r.label_names.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(r.label_names.len()));
        for (name, row) in r.label_names.iter().zip(&f.confusion) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "| {name} | {} |", cells.join(" | "));
        }
        if let Some(ae) = &f.autoencoder {
            let _ = writeln!(
                s,
                "\nAutoencoder: {} rows, MSE {:.4} -> {:.4}",
                ae.training_rows, ae.initial_mse, ae.final_mse
            );
        }
    }
    let _ = writeln!(s, "\n## Seeds\n\n```\n{}\n```", serde_json::to_string_pretty(&r.seeds).unwrap_or_default());
    let _ = writeln!(s, "\n## Configuration\n\n```toml\n{}\n```", r.config.trim_end());
    s
}

/// CSV with `track_id,true_label,predicted_label,tie_broken`.
pub fn write_predictions(preds: &[Prediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["track_id", "true_label", "predicted_label", "tie_broken"])?;
    for p in preds {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `report.json`, `report.md`, `predictions.csv` and `figure.csv` under `dir`.
pub fn write_report(r: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("report.json"), &serde_json::to_string_pretty(r)?)?;
    write_file(&dir.join("report.md"), &report_markdown(r))?;
    let preds: Vec<Prediction> = r.folds.iter().flat_map(|f| f.predictions.iter().cloned()).collect();
    write_predictions(&preds, dir.join("predictions.csv"))?;
    let mut fig = csv::Writer::from_path(dir.join("figure.csv"))?;
    fig.write_record(["feature_set", "selector", "mean_f1", "std_f1"])?;
    figure_rows(&mut fig, &r.feature_set, &r.selector, r.mean_f1, r.std_f1)?;
    fig.flush().map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorResult {
    pub selector: String,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub per_fold_f1: Vec<f64>,
    /// `k`, `1` or `m` (every texture).
    pub budget: String,
    pub mean_textures_per_track: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    /// Absent when the fold differences are constant and non-zero.
    pub p_value: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dataset: String,
    pub feature_set: String,
    pub selectors: Vec<SelectorResult>,
    pub pairs: Vec<PairwiseTest>,
}

impl ComparisonReport {
    pub fn result(&self, selector: &str) -> Option<&SelectorResult> {
        self.selectors.iter().find(|s| s.selector == selector)
    }
}

fn budget_label(s: &SelectorSpec) -> String {
    match s.kind {
        SelectorKind::All => "m".into(),
        SelectorKind::Fts => "1".into(),
        SelectorKind::Linspace | SelectorKind::Kmeansc => s.k.to_string(),
    }
}

/// Run each selector over the same folds and seeds, then test every pair.
pub fn compare_selectors(
    manifest: &DatasetManifest,
    base: &ExperimentConfig,
    selectors: &[SelectorSpec],
    opts: &RunOptions,
) -> Result<(ComparisonReport, Vec<ExperimentReport>)> {
    if selectors.len() < 2 {
        return Err(Error::InvalidParameter("comparison needs at least two selectors".into()));
    }
    let mut reports = Vec::with_capacity(selectors.len());
    for s in selectors {
        let mut config = ExperimentConfig {
            selector: *s,
            ..base.clone()
        };
        config.source = None;
        log::info!("running {s}");
        reports.push(run_experiment(manifest, &config, opts)?);
    }
    let results: Vec<SelectorResult> = selectors
        .iter()
        .zip(&reports)
        .map(|(s, r)| {
            let tracks: usize = r.folds.iter().map(|f| f.test_tracks).sum();
            let textures: usize = r.folds.iter().map(|f| f.selected_test_textures).sum();
            SelectorResult {
                selector: s.to_string(),
                mean_f1: r.mean_f1,
                std_f1: r.std_f1,
                per_fold_f1: r.per_fold_f1(),
                budget: budget_label(s),
                mean_textures_per_track: textures as f64 / tracks.max(1) as f64,
            }
        })
        .collect();
    let mut pairs = Vec::new();
    for i in 0..results.len() {
        for j in i + 1..results.len() {
            let (a, b) = (&results[i], &results[j]);
            let (p_value, note) = match paired_t_test(&a.per_fold_f1, &b.per_fold_f1) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            pairs.push(PairwiseTest {
                a: a.selector.clone(),
                b: b.selector.clone(),
                p_value,
                note,
            });
        }
    }
    Ok((
        ComparisonReport {
            dataset: manifest.name.clone(),
            feature_set: base.features.to_string(),
            selectors: results,
            pairs,
        },
        reports,
    ))
}

pub fn comparison_markdown(c: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Selector comparison: {} / {}\n", c.dataset, c.feature_set);
    s.push_str("| selector | budget | textures/track | mean F1 | std | per fold |\n|---|---|---|---|---|---|\n");
    for r in &c.selectors {
        let folds: Vec<String> = r.per_fold_f1.iter().map(|f| format!("{f:.4}")).collect();
        let _ = writeln!(
            s,
            "| {} | {} | {:.1} | {:.4} | {:.4} | {} |",
            r.selector,
            r.budget,
            r.mean_textures_per_track,
            r.mean_f1,
            r.std_f1,
            folds.join(", ")
        );
    }
    s.push_str("\n## Paired t-tests over folds\n\n| a | b | p |\n|---|---|---|\n");
    for p in &c.pairs {
        let v = match (p.p_value, &p.note) {
            (Some(v), _) => format!("{v:.4}"),
            (None, Some(n)) => n.clone(),
            (None, None) => "-".into(),
        };
        let _ = writeln!(s, "| {} | {} | {v} |", p.a, p.b);
    }
    s
}

/// `comparison.json`, `comparison.md`, `figure.csv`, and one report directory per selector.
pub fn write_comparison(c: &ComparisonReport, reports: &[ExperimentReport], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("comparison.json"), &serde_json::to_string_pretty(c)?)?;
    write_file(&dir.join("comparison.md"), &comparison_markdown(c))?;
    let mut fig = csv::Writer::from_path(dir.join("figure.csv"))?;
    fig.write_record(["feature_set", "selector", "mean_f1", "std_f1"])?;
    for r in &c.selectors {
        figure_rows(&mut fig, &c.feature_set, &r.selector, r.mean_f1, r.std_f1)?;
    }
    fig.flush().map_err(|e| Error::io(dir, e))?;
    for r in reports {
        write_report(r, dir.join(&r.selector))?;
    }
    Ok(())
}
