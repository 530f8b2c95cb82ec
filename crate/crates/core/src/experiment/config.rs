use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AEHyperparams;
use crate::dsp::FrameParams;
use crate::error::{Error, Result};
use crate::learning::{ClassifierParams, ANOVA_FRACTIONS, KNN_K_GRID, SVM_C_GRID};
use crate::selection::SelectorSpec;
use crate::textures::TextureParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSet {
    Handcrafted,
    MelSpec,
    MelRp { m: usize },
    MelAe { h: usize },
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSet::Handcrafted => write!(f, "HANDCRAFTED"),
            FeatureSet::MelSpec => write!(f, "MEL-SPEC"),
            FeatureSet::MelRp { m } => write!(f, "MEL-RP({m})"),
            FeatureSet::MelAe { h } => write!(f, "MEL-AE({h})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierGrid {
    #[serde(default)]
    pub knn_k: Vec<usize>,
    #[serde(default)]
    pub svm_c: Vec<f64>,
    /// Unset means `1 / n_features` after masking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svm_gamma: Option<f64>,
}

impl Default for ClassifierGrid {
    fn default() -> Self {
        Self {
            knn_k: KNN_K_GRID.to_vec(),
            svm_c: SVM_C_GRID.to_vec(),
            svm_gamma: None,
        }
    }
}

impl ClassifierGrid {
    pub fn svm_only() -> Self {
        Self {
            knn_k: Vec::new(),
            ..Self::default()
        }
    }

    pub fn params(&self) -> Vec<ClassifierParams> {
        self.svm_c
            .iter()
            .map(|&c| ClassifierParams::Svm {
                c,
                gamma: self.svm_gamma,
            })
            .chain(self.knn_k.iter().map(|&k| ClassifierParams::Knn { k }))
            .collect()
    }
}

/// How the training textures are divided for hyperparameter validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Whole tracks go to either side, stratified by label.
    #[default]
    Track,
    /// Textures are drawn at random regardless of track.
    Texture,
}

mod selector_name {
    use super::SelectorSpec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &SelectorSpec, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SelectorSpec, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_seed() -> u64 {
    0
}
fn default_validation() -> f64 {
    0.2
}
fn default_cap() -> usize {
    300_000
}
fn default_runs() -> usize {
    1
}
fn default_fractions() -> Vec<f64> {
    ANOVA_FRACTIONS.to_vec()
}
fn default_frames() -> FrameParams {
    FrameParams::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(with = "selector_name")]
    pub selector: SelectorSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_validation")]
    pub validation_split: f64,
    #[serde(default)]
    pub split: SplitMode,
    /// Stacked training textures beyond this are subsampled per label.
    #[serde(default = "default_cap")]
    pub all_cap: usize,
    /// Independent K-Means seedings; the run with the median mean F1 is reported.
    #[serde(default = "default_runs")]
    pub kmeans_runs: usize,
    #[serde(default = "default_fractions")]
    pub anova_fractions: Vec<f64>,
    pub features: FeatureSet,
    #[serde(default = "default_frames")]
    pub frames: FrameParams,
    #[serde(default)]
    pub textures: TextureParams,
    #[serde(default)]
    pub classifiers: ClassifierGrid,
    #[serde(default)]
    pub autoencoder: AEHyperparams,
    /// Text the config was parsed from, echoed into reports.
    #[serde(skip)]
    pub source: Option<String>,
}

impl ExperimentConfig {
    pub fn new(features: FeatureSet, selector: SelectorSpec) -> Self {
        Self {
            selector,
            seed: default_seed(),
            validation_split: default_validation(),
            split: SplitMode::Track,
            all_cap: default_cap(),
            kmeans_runs: default_runs(),
            anova_fractions: default_fractions(),
            features,
            frames: FrameParams::default(),
            textures: TextureParams::default(),
            classifiers: ClassifierGrid::default(),
            autoencoder: AEHyperparams::default(),
            source: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.source = Some(text.to_owned());
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// The original text when parsed from a file, otherwise a TOML rendering.
    pub fn echo(&self) -> String {
        self.source.clone().unwrap_or_else(|| self.to_toml())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return bad(format!("validation_split {} not in (0, 1)", self.validation_split));
        }
        if self.anova_fractions.is_empty() {
            return bad("anova_fractions is empty".into());
        }
        if let Some(f) = self.anova_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("anova fraction {f} not in (0, 1]"));
        }
        if self.classifiers.params().is_empty() {
            return bad("classifier grid is empty".into());
        }
        if self.classifiers.knn_k.contains(&0) {
            return bad("KNN K must be positive".into());
        }
        if self.classifiers.svm_c.iter().any(|c| !(*c > 0.0)) {
            return bad("SVM C must be positive".into());
        }
        if matches!(self.classifiers.svm_gamma, Some(g) if !(g > 0.0)) {
            return bad("SVM gamma must be positive".into());
        }
        if self.all_cap == 0 || self.kmeans_runs == 0 {
            return bad("all_cap and kmeans_runs must be positive".into());
        }
        match self.features {
            FeatureSet::MelRp { m } if m == 0 || m >= crate::features::N_MELS => {
                return bad(format!("mel_rp target dimension {m} must be in [1, {})", crate::features::N_MELS))
            }
            FeatureSet::MelAe { h: 0 } => return bad("mel_ae bottleneck must be positive".into()),
            _ => {}
        }
        self.frames.validate()?;
        self.textures.validate()
    }
}
