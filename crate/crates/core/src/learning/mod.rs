//! Standardization, ANOVA feature filtering, KNN/SVM texture classifiers,
//! track-level voting and evaluation metrics.

mod anova;
mod knn;
mod metrics;
mod model;
mod standardize;
pub mod svm;

pub use anova::{anova_f_scores, anova_mask, FeatureMask, ANOVA_FRACTIONS};
pub use knn::{train_knn, Knn, KNN_K_GRID};
pub use metrics::{confusion_matrix, paired_t_test, weighted_f1};
pub use model::{
    load_trained_model, predict_selected, predict_track, save_trained_model, ClassifierParams,
    Classifier, TrainedModel, VoteResult,
};
pub use standardize::{fit_standardizer, Standardizer};
pub use svm::{train_svm, SvmModel, SVM_C_GRID};

/// Genre identifier; an index into the dataset's label list.
pub type Label = usize;
