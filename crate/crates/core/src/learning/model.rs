use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::anova::{anova_mask, FeatureMask};
use super::knn::{train_knn, Knn};
use super::standardize::Standardizer;
use super::svm::{train_svm, BinarySvm, SvmModel};
use super::Label;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::selection::{select, SelectorKind, SelectorSpec};
use crate::textures::TextureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassifierParams {
    Knn { k: usize },
    /// `gamma = None` means `1 / n_features` after masking.
    Svm { c: f64, gamma: Option<f64> },
}

impl std::fmt::Display for ClassifierParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierParams::Knn { k } => write!(f, "knn(K={k})"),
            ClassifierParams::Svm { c, gamma: None } => write!(f, "svm(C={c})"),
            ClassifierParams::Svm { c, gamma: Some(g) } => write!(f, "svm(C={c}, gamma={g})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Knn(Knn),
    Svm(SvmModel),
}

impl Classifier {
    pub fn train(x: ArrayView2<f64>, labels: &[Label], params: ClassifierParams) -> Result<Self> {
        match params {
            ClassifierParams::Knn { k } => Ok(Classifier::Knn(train_knn(x, labels, k)?)),
            ClassifierParams::Svm { c, gamma } => {
                let gamma = gamma.unwrap_or(1.0 / x.ncols().max(1) as f64);
                Ok(Classifier::Svm(train_svm(x, labels, c, gamma)?))
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Classifier::Knn(m) => m.dim(),
            Classifier::Svm(m) => m.dim,
        }
    }

    /// Per-row label and confidence (KNN neighbour votes or one-vs-one vote total).
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<(Label, usize)>> {
        match self {
            Classifier::Knn(m) => m.predict(x),
            Classifier::Svm(m) => m.predict(x),
        }
    }
}

/// Standardizer, texture selector, feature mask and fitted classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub standardizer: Standardizer,
    pub selector: SelectorSpec,
    pub mask: FeatureMask,
    pub classifier: Classifier,
    pub label_set: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub per_texture_labels: Vec<Label>,
    pub final_label: Label,
    pub tie_broken: bool,
}

fn stack(tracks: &[TextureMatrix]) -> Result<(Array2<f64>, Vec<Label>)> {
    let views: Vec<ArrayView2<f64>> = tracks.iter().map(|t| t.values.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views)
        .map_err(|e| Error::Format(format!("cannot stack textures: {e}")))?;
    let mut labels = Vec::with_capacity(x.nrows());
    for t in tracks {
        let l = t.label.ok_or_else(|| {
            Error::InvalidParameter(format!("training track {} has no label", t.track_id))
        })?;
        labels.extend(std::iter::repeat(l).take(t.n_textures()));
    }
    Ok((x, labels))
}

impl TrainedModel {
    /// Fit the mask and classifier on tracks whose textures are already
    /// standardized with `standardizer` and reduced with `selector`.
    pub fn fit(
        selected: &[TextureMatrix],
        standardizer: Standardizer,
        selector: SelectorSpec,
        fraction: f64,
        params: ClassifierParams,
    ) -> Result<Self> {
        if selected.is_empty() {
            return Err(Error::EmptyInput("no training tracks".into()));
        }
        let (x, labels) = stack(selected)?;
        let mask = if fraction >= 1.0 {
            FeatureMask::identity(x.ncols())
        } else {
            anova_mask(x.view(), &labels, fraction)?
        };
        let xm = mask.apply(x.view())?;
        let classifier = Classifier::train(xm.view(), &labels, params)?;
        let mut label_set = labels;
        label_set.sort_unstable();
        label_set.dedup();
        Ok(Self {
            standardizer,
            selector,
            mask,
            classifier,
            label_set,
        })
    }
}

/// Mask, classify and vote over textures that are already standardized and selected.
pub fn predict_selected(model: &TrainedModel, selected: &TextureMatrix) -> Result<VoteResult> {
    if selected.n_textures() == 0 {
        return Err(Error::EmptyInput(format!(
            "track {} has no textures",
            selected.track_id
        )));
    }
    let x = model.mask.apply(selected.values.view())?;
    let preds = model.classifier.predict(x.view())?;
    Ok(vote(&preds))
}

/// Full test-time path: standardize, select, mask, classify, vote.
pub fn predict_track(model: &TrainedModel, textures: &TextureMatrix) -> Result<VoteResult> {
    if textures.n_textures() == 0 {
        return Err(Error::EmptyInput(format!(
            "track {} has no textures",
            textures.track_id
        )));
    }
    let z = model.standardizer.transform(textures.values.view())?;
    let standardized = TextureMatrix::from_parts(z, textures.track_id.clone(), textures.label);
    let selected = select(&standardized, &model.selector)?;
    predict_selected(model, &selected)
}

/// Modal label; ties go to the larger summed confidence, then the lowest label.
fn vote(preds: &[(Label, usize)]) -> VoteResult {
    let mut tally: Vec<(Label, usize, usize)> = Vec::new();
    for &(l, conf) in preds {
        match tally.iter_mut().find(|e| e.0 == l) {
            Some(e) => {
                e.1 += 1;
                e.2 += conf;
            }
            None => tally.push((l, 1, conf)),
        }
    }
    let top = tally.iter().map(|e| e.1).max().unwrap_or(0);
    let tied = tally.iter().filter(|e| e.1 == top).count() > 1;
    let best = tally
        .iter()
        .filter(|e| e.1 == top)
        .max_by(|a, b| a.2.cmp(&b.2).then(b.0.cmp(&a.0)))
        .expect("non-empty predictions");
    VoteResult {
        per_texture_labels: preds.iter().map(|p| p.0).collect(),
        final_label: best.0,
        tie_broken: tied,
    }
}

const MODEL_MAGIC: &[u8; 4] = b"TSTM";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    format_version: u32,
    classifier: String,
    selector: SelectorSpec,
    input_features: usize,
    kept_features: usize,
    mask_fraction: f64,
    label_set: Vec<Label>,
    label_names: Vec<String>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

fn selector_code(kind: SelectorKind) -> u8 {
    match kind {
        SelectorKind::Fts => 0,
        SelectorKind::Linspace => 1,
        SelectorKind::Kmeansc => 2,
        SelectorKind::All => 3,
    }
}

fn write_usizes<W: Write>(w: &mut Writer<W>, v: &[usize]) -> Result<()> {
    w.len(v.len())?;
    v.iter().try_for_each(|&x| w.u64(x as u64))
}

fn read_usizes<R: std::io::Read>(r: &mut Reader<R>) -> Result<Vec<usize>> {
    let n = r.len()?;
    (0..n).map(|_| r.len()).collect()
}

/// Binary weights at `path` plus a JSON description at `path.json`.
pub fn save_trained_model(model: &TrainedModel, path: impl AsRef<Path>, label_names: &[String]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file));
    w.magic(MODEL_MAGIC, MODEL_VERSION)?;
    w.f64s(&model.standardizer.means)?;
    w.f64s(&model.standardizer.stds)?;
    write_usizes(&mut w, &model.standardizer.constant_columns)?;
    w.u8(selector_code(model.selector.kind))?;
    w.u64(model.selector.k as u64)?;
    w.u64(model.selector.seed)?;
    write_usizes(&mut w, &model.mask.kept_indices)?;
    w.f64(model.mask.fraction)?;
    write_usizes(&mut w, &model.label_set)?;
    match &model.classifier {
        Classifier::Knn(k) => {
            w.u8(0)?;
            w.u64(k.k as u64)?;
            w.matrix_f64(&k.data)?;
            write_usizes(&mut w, &k.labels)?;
        }
        Classifier::Svm(s) => {
            w.u8(1)?;
            w.f64(s.c)?;
            w.f64(s.gamma)?;
            w.u64(s.dim as u64)?;
            write_usizes(&mut w, &s.classes)?;
            w.len(s.machines.len())?;
            for m in &s.machines {
                w.u64(m.positive as u64)?;
                w.u64(m.negative as u64)?;
                w.f64(m.rho)?;
                w.u64(m.iterations as u64)?;
                w.u8(m.converged as u8)?;
                w.f64s(&m.coef)?;
                w.matrix_f64(&m.support)?;
            }
        }
    }
    w.into_inner().flush().map_err(|e| Error::io(path, e))?;
    let side = ModelSidecar {
        format_version: MODEL_VERSION,
        classifier: match &model.classifier {
            Classifier::Knn(k) => format!("knn(K={})", k.k),
            Classifier::Svm(s) => format!("svm(C={}, gamma={})", s.c, s.gamma),
        },
        selector: model.selector,
        input_features: model.standardizer.dim(),
        kept_features: model.mask.len(),
        mask_fraction: model.mask.fraction,
        label_set: model.label_set.clone(),
        label_names: label_names.to_vec(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(sp, e))
}

/// Load a model and the label names stored in its sidecar.
pub fn load_trained_model(path: impl AsRef<Path>) -> Result<(TrainedModel, Vec<String>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file));
    r.magic(MODEL_MAGIC, MODEL_VERSION)?;
    let standardizer = Standardizer {
        means: r.f64s()?,
        stds: r.f64s()?,
        constant_columns: read_usizes(&mut r)?,
    };
    let kind = match r.u8()? {
        0 => SelectorKind::Fts,
        1 => SelectorKind::Linspace,
        2 => SelectorKind::Kmeansc,
        3 => SelectorKind::All,
        other => return Err(Error::Format(format!("unknown selector code {other}"))),
    };
    let selector = SelectorSpec {
        kind,
        k: r.len()?,
        seed: r.u64()?,
    };
    let mask = FeatureMask {
        kept_indices: read_usizes(&mut r)?,
        fraction: r.f64()?,
    };
    let label_set = read_usizes(&mut r)?;
    let classifier = match r.u8()? {
        0 => {
            let k = r.len()?;
            let data = r.matrix_f64()?;
            let labels = read_usizes(&mut r)?;
            Classifier::Knn(Knn { k, data, labels })
        }
        1 => {
            let c = r.f64()?;
            let gamma = r.f64()?;
            let dim = r.len()?;
            let classes = read_usizes(&mut r)?;
            let n = r.len()?;
            let mut machines = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let positive = r.len()?;
                let negative = r.len()?;
                let rho = r.f64()?;
                let iterations = r.len()?;
                let converged = r.u8()? != 0;
                let coef = r.f64s()?;
                let support = r.matrix_f64()?;
                machines.push(BinarySvm {
                    positive,
                    negative,
                    support,
                    coef,
                    rho,
                    iterations,
                    converged,
                });
            }
            Classifier::Svm(SvmModel {
                c,
                gamma,
                classes,
                machines,
                dim,
            })
        }
        other => return Err(Error::Format(format!("unknown classifier code {other}"))),
    };
    r.expect_eof()?;
    if mask.len() != classifier.input_dim() {
        return Err(Error::Format("mask size does not match classifier input".into()));
    }
    let sp = sidecar_path(path);
    let label_names = match std::fs::read(&sp) {
        Ok(bytes) => serde_json::from_slice::<ModelSidecar>(&bytes)?.label_names,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(sp, e)),
    };
    Ok((
        TrainedModel {
            standardizer,
            selector,
            mask,
            classifier,
            label_set,
        },
        label_names,
    ))
}
