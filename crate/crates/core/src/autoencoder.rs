//! Single-bottleneck autoencoder over mel frames (MEL-AE features).
//!
//! `x → ReLU(x·W₁ + b₁) → (·)·W₂ + b₂`, trained with mini-batch SGD on the
//! mean squared reconstruction error. The bottleneck activations are the features.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSource};

pub const BOTTLENECK_DIMS: [usize; 5] = [16, 32, 64, 128, 256];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AEHyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Training rows are subsampled to at most this many.
    pub max_rows: usize,
}

impl Default for AEHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 256,
            seed: 0,
            max_rows: 200_000,
        }
    }
}

impl AEHyperparams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning rate must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.max_rows == 0 {
            return Err(Error::InvalidParameter(
                "epochs, batch size and row cap must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AEModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub hyperparams: AEHyperparams,
    /// Reconstruction MSE over the training rows before the first update.
    pub initial_mse: f64,
    /// Reconstruction MSE over the training rows after each epoch.
    pub training_log: Vec<f64>,
    /// Rows actually used for training after subsampling.
    pub training_rows: usize,
}

/// Gradients of the batch MSE with respect to the four parameter blocks.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl AEModel {
    /// Xavier-uniform weights and zero biases.
    pub fn init(input_dim: usize, hidden: usize, hyperparams: AEHyperparams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hyperparams.seed);
        let limit = (6.0 / (input_dim + hidden) as f64).sqrt();
        let mut xavier = |r, c| Array2::from_shape_simple_fn((r, c), || rng.gen_range(-limit..limit));
        let w1 = xavier(input_dim, hidden);
        let w2 = xavier(hidden, input_dim);
        Self {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(input_dim),
            hyperparams,
            initial_mse: f64::NAN,
            training_log: Vec::new(),
            training_rows: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.ncols()
    }

    fn hidden_pre(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w1) + &self.b1
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let h = self.hidden_pre(x).mapv(relu);
        h.dot(&self.w2) + &self.b2
    }

    /// Mean over all elements of the squared reconstruction error.
    pub fn mse(&self, x: ArrayView2<f64>) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let mut total = 0.0;
        // chunked to bound the temporary size
        for chunk in x.axis_chunks_iter(Axis(0), 4096) {
            let r = self.reconstruct(chunk);
            total += (&r - &chunk).mapv(|e| e * e).sum();
        }
        total / x.len() as f64
    }

    /// Loss and analytic gradients on one batch.
    pub fn gradients(&self, x: ArrayView2<f64>) -> (f64, Gradients) {
        let z = self.hidden_pre(x);
        let h = z.mapv(relu);
        let y = h.dot(&self.w2) + &self.b2;
        let err = &y - &x;
        let n = x.len() as f64;
        let loss = err.mapv(|e| e * e).sum() / n;
        let dy = err * (2.0 / n);
        let w2 = h.t().dot(&dy);
        let b2 = dy.sum_axis(Axis(0));
        let mut dz = dy.dot(&self.w2.t());
        dz.zip_mut_with(&z, |g, &zi| {
            if zi <= 0.0 {
                *g = 0.0
            }
        });
        let w1 = x.t().dot(&dz);
        let b1 = dz.sum_axis(Axis(0));
        (loss, Gradients { w1, b1, w2, b2 })
    }

    fn apply(&mut self, g: &Gradients, lr: f64) {
        self.w1.scaled_add(-lr, &g.w1);
        self.b1.scaled_add(-lr, &g.b1);
        self.w2.scaled_add(-lr, &g.w2);
        self.b2.scaled_add(-lr, &g.b2);
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Train on frames that have already been standardized column-wise.
pub fn train_autoencoder(frames: &FeatureMatrix, hidden: usize, hp: AEHyperparams) -> Result<AEModel> {
    hp.validate()?;
    if hidden == 0 {
        return Err(Error::InvalidParameter("bottleneck size must be positive".into()));
    }
    if frames.nrows() == 0 {
        return Err(Error::EmptyInput("no frames to train the autoencoder on".into()));
    }
    if frames.nrows() < hp.batch_size {
        return Err(Error::TooShort {
            needed: hp.batch_size,
            got: frames.nrows(),
            unit: "frames",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5eed_ae);
    let data = if frames.nrows() > hp.max_rows {
        let mut idx: Vec<usize> = (0..frames.nrows()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(hp.max_rows);
        idx.sort_unstable();
        frames.values.select(Axis(0), &idx)
    } else {
        frames.values.clone()
    };
    let mut model = AEModel::init(data.ncols(), hidden, hp);
    model.training_rows = data.nrows();
    model.initial_mse = model.mse(data.view());
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut batch = Array2::zeros((hp.batch_size, data.ncols()));
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let mut b = batch.slice_mut(s![..chunk.len(), ..]);
            for (mut row, &i) in b.outer_iter_mut().zip(chunk) {
                row.assign(&data.row(i));
            }
            let (_, g) = model.gradients(batch.slice(s![..chunk.len(), ..]));
            model.apply(&g, hp.learning_rate);
        }
        let loss = model.mse(data.view());
        if !loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                loss,
            });
        }
        model.training_log.push(loss);
    }
    Ok(model)
}

/// Bottleneck activations `ReLU(frames·W₁ + b₁)`.
pub fn encode(model: &AEModel, frames: &FeatureMatrix) -> Result<FeatureMatrix> {
    if frames.ncols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: frames.ncols(),
        });
    }
    let values = model.hidden_pre(frames.values.view()).mapv(relu);
    let names = (0..model.hidden()).map(|i| format!("ae{i}")).collect();
    FeatureMatrix::new(values, names, FeatureSource::MelAe)
}

const AE_MAGIC: &[u8; 4] = b"TSAE";
const AE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct AeSidecar {
    format_version: u32,
    input_dim: usize,
    hidden: usize,
    hyperparams: AEHyperparams,
    initial_mse: f64,
    training_rows: usize,
    training_log: Vec<f64>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    p.into()
}

/// Write weights to `path` and hyperparameters plus the training log to `path.json`.
pub fn save_model(model: &AEModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file));
    w.magic(AE_MAGIC, AE_VERSION)?;
    w.u32(model.input_dim() as u32)?;
    w.u32(model.hidden() as u32)?;
    for &v in model.w1.iter().chain(&model.b1).chain(&model.w2).chain(&model.b2) {
        w.f64(v)?;
    }
    use std::io::Write;
    w.into_inner().flush().map_err(|e| Error::io(path, e))?;
    let side = AeSidecar {
        format_version: AE_VERSION,
        input_dim: model.input_dim(),
        hidden: model.hidden(),
        hyperparams: model.hyperparams,
        initial_mse: model.initial_mse,
        training_rows: model.training_rows,
        training_log: model.training_log.clone(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(sp, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AEModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file));
    r.magic(AE_MAGIC, AE_VERSION)?;
    let d = r.u32()? as usize;
    let h = r.u32()? as usize;
    let mut read = |n: usize| (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>();
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let w1 = Array2::from_shape_vec((d, h), read(d * h)?).map_err(shape_err)?;
    let b1 = Array1::from(read(h)?);
    let w2 = Array2::from_shape_vec((h, d), read(h * d)?).map_err(shape_err)?;
    let b2 = Array1::from(read(d)?);
    r.expect_eof()?;
    let sp = sidecar_path(path);
    let text = std::fs::read(&sp).map_err(|e| Error::io(&sp, e))?;
    let side: AeSidecar = serde_json::from_slice(&text)?;
    if side.input_dim != d || side.hidden != h {
        return Err(Error::Format("autoencoder sidecar does not match weights".into()));
    }
    Ok(AEModel {
        w1,
        b1,
        w2,
        b2,
        hyperparams: side.hyperparams,
        initial_mse: side.initial_mse,
        training_log: side.training_log,
        training_rows: side.training_rows,
    })
}
