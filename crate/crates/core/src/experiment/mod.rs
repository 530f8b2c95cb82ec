//! Cross-validated experiments, synthetic data, summaries and PCA output.

mod config;
mod extract;
mod manifest;
mod pca;
mod report;
mod run;
mod summarize;
mod synth;

pub use config::{ClassifierGrid, ExperimentConfig, FeatureSet, SplitMode};
pub use extract::{audio_digest, frame_features, load_track, textures_from_frames, Extractor, FeatureCache, FoldEncoder};
pub use manifest::{DatasetManifest, ManifestEntry};
pub use run::{
    run_experiment, train_model, EncoderSummary, ExperimentReport, FoldReport, GridPoint, Prediction, RunOptions,
    Seeds, Timings,
};
pub use pca::{fit_pca, pca_emit, Pca};
pub use summarize::{summarize_track, summary_rows};
pub use synth::{generate_synthetic_dataset, truncate_dataset, SyntheticSpec};
pub use report::{
    compare_selectors, comparison_markdown, report_markdown, write_comparison, write_predictions, write_report, ComparisonReport,
    PairwiseTest, SelectorResult,
};
