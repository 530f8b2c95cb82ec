//! Delta augmentation and windowed mean/std aggregation of frame features.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextureParams {
    /// Frames aggregated into one texture.
    pub window: usize,
    /// Frames between successive texture starts.
    pub hop: usize,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            window: 216,
            hop: 10,
        }
    }
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hop == 0 {
            return Err(Error::InvalidParameter(
                "texture window and hop must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn texture_count(&self, n_frames: usize) -> usize {
        if n_frames < self.window {
            0
        } else {
            (n_frames - self.window) / self.hop + 1
        }
    }

    /// Frame range `[start, end)` covered by texture `i`.
    pub fn frame_range(&self, i: usize) -> (usize, usize) {
        (i * self.hop, i * self.hop + self.window)
    }
}

/// Aggregated textures of one track. Columns are `[means | stds]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMatrix {
    pub values: Array2<f64>,
    pub track_id: String,
    pub label: Option<usize>,
}

impl TextureMatrix {
    pub fn new(values: Array2<f64>, track_id: impl Into<String>, label: Option<usize>) -> Result<Self> {
        if values.ncols() % 6 != 0 {
            return Err(Error::Format(format!(
                "texture width {} is not a multiple of 6",
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("texture matrix contains non-finite values".into()));
        }
        Ok(Self {
            values,
            track_id: track_id.into(),
            label,
        })
    }

    /// Build without the width check; used for selected or masked rows.
    pub(crate) fn from_parts(values: Array2<f64>, track_id: String, label: Option<usize>) -> Self {
        Self {
            values,
            track_id,
            label,
        }
    }

    pub fn n_textures(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Append first and second order differences: `[x, Δx, ΔΔx]` with `Δx[0] = 0`.
pub fn add_deltas(frames: &FeatureMatrix) -> Result<FeatureMatrix> {
    let n = frames.nrows();
    if n < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: n,
            unit: "frames",
        });
    }
    let d1 = first_difference(frames.values.view());
    let d2 = first_difference(d1.view());
    let values = ndarray::concatenate(
        Axis(1),
        &[frames.values.view(), d1.view(), d2.view()],
    )
    .expect("equal row counts");
    let names = frames
        .names
        .iter()
        .cloned()
        .chain(frames.names.iter().map(|n| format!("d_{n}")))
        .chain(frames.names.iter().map(|n| format!("dd_{n}")))
        .collect();
    FeatureMatrix::new(values, names, frames.source)
}

fn first_difference(x: ArrayView2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros(x.raw_dim());
    if x.nrows() > 1 {
        let diff = &x.slice(s![1.., ..]) - &x.slice(s![..-1, ..]);
        d.slice_mut(s![1.., ..]).assign(&diff);
    }
    d
}

fn mean_std(block: ArrayView2<f64>, out: &mut [f64]) {
    let n = block.nrows() as f64;
    let cols = block.ncols();
    for (j, col) in block.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out[j] = mean;
        out[cols + j] = var.sqrt();
    }
}

/// Mean and population std over each sliding window of frames.
pub fn texturize(
    frames_with_deltas: &FeatureMatrix,
    p: TextureParams,
    track_id: &str,
    label: Option<usize>,
) -> Result<TextureMatrix> {
    p.validate()?;
    let n = frames_with_deltas.nrows();
    let count = p.texture_count(n);
    if count == 0 {
        return Err(Error::TooShort {
            needed: p.window,
            got: n,
            unit: "frames",
        });
    }
    let cols = frames_with_deltas.ncols();
    let mut values = Array2::zeros((count, 2 * cols));
    for (i, mut row) in values.outer_iter_mut().enumerate() {
        let (start, end) = p.frame_range(i);
        let block = frames_with_deltas.values.slice(s![start..end, ..]);
        mean_std(block, row.as_slice_mut().expect("contiguous row"));
    }
    TextureMatrix::new(values, track_id, label)
}

/// One texture aggregating every frame of the track (FTS).
pub fn full_track_statistics(
    frames_with_deltas: &FeatureMatrix,
    track_id: &str,
    label: Option<usize>,
) -> Result<TextureMatrix> {
    let n = frames_with_deltas.nrows();
    if n < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: n,
            unit: "frames",
        });
    }
    texturize(
        frames_with_deltas,
        TextureParams { window: n, hop: 1 },
        track_id,
        label,
    )
}

/// Names for texture columns built from frame feature names.
pub fn texture_names(frame_names: &[String]) -> Vec<String> {
    frame_names
        .iter()
        .map(|n| format!("mean_{n}"))
        .chain(frame_names.iter().map(|n| format!("std_{n}")))
        .collect()
}

impl From<&TextureMatrix> for FeatureMatrix {
    fn from(t: &TextureMatrix) -> Self {
        let names = (0..t.dim()).map(|i| format!("t{i}")).collect();
        FeatureMatrix {
            values: t.values.clone(),
            names,
            source: FeatureSource::Texture,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn fm(values: Array2<f64>) -> FeatureMatrix {
        let names = (0..values.ncols()).map(|i| format!("f{i}")).collect();
        FeatureMatrix::new(values, names, FeatureSource::Handcrafted).unwrap()
    }

    #[test]
    fn deltas_of_ramp() {
        let x = fm(array![[0.0], [1.0], [2.0], [3.0]]);
        let d = add_deltas(&x).unwrap();
        assert_eq!(d.values.column(1).to_vec(), vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(d.values.column(2).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(d.names, vec!["f0", "d_f0", "dd_f0"]);
    }

    #[test]
    fn deltas_of_constant_are_zero() {
        let d = add_deltas(&fm(Array2::from_elem((5, 2), 4.0))).unwrap();
        assert!(d.values.slice(s![.., 2..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deltas_triple_columns() {
        let d = add_deltas(&fm(Array2::zeros((4, 26)))).unwrap();
        assert_eq!(d.ncols(), 78);
        assert!(add_deltas(&fm(Array2::zeros((2, 26)))).is_err());
    }

    #[test]
    fn texture_count_for_thirty_seconds() {
        let p = TextureParams::default();
        assert_eq!(p.texture_count(1291), 108);
        let t = texturize(&fm(Array2::zeros((1291, 78))), p, "t", None).unwrap();
        assert_eq!(t.n_textures(), 108);
        assert_eq!(t.dim(), 156);
    }

    #[test]
    fn overlap_fraction() {
        let p = TextureParams::default();
        let shared = p.window - p.hop;
        let frac = shared as f64 / p.window as f64;
        assert_eq!(shared, 206);
        assert!((frac - 0.954).abs() < 0.001);
    }

    #[test]
    fn constant_frames_texture() {
        let t = texturize(&fm(Array2::from_elem((300, 6), 2.5)), TextureParams::default(), "c", Some(1)).unwrap();
        assert!(t.values.slice(s![.., ..6]).iter().all(|&v| v == 2.5));
        assert!(t.values.slice(s![.., 6..]).iter().all(|&v| v == 0.0));
        assert_eq!(t.label, Some(1));
    }

    #[test]
    fn track_shorter_than_window() {
        let err = texturize(&fm(Array2::zeros((100, 6))), TextureParams::default(), "x", None);
        assert!(matches!(err, Err(Error::TooShort { .. })));
    }

    #[test]
    fn fts_shape_and_homogeneity() {
        let frames = fm(Array2::from_elem((400, 12), -1.0));
        let f = full_track_statistics(&frames, "a", None).unwrap();
        assert_eq!(f.values.dim(), (1, 24));
        let t = texturize(&frames, TextureParams::default(), "a", None).unwrap();
        assert_eq!(f.values.row(0), t.values.row(3));
        assert!(full_track_statistics(&fm(Array2::zeros((1, 6))), "a", None).is_err());
    }

    #[test]
    fn fts_matches_full_window_texturize() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let frames = fm(Array2::from_shape_simple_fn((50, 6), || rng.gen::<f64>()));
        let f = full_track_statistics(&frames, "a", None).unwrap();
        let t = texturize(&frames, TextureParams { window: 50, hop: 7 }, "a", None).unwrap();
        assert_eq!(f.values, t.values);
    }

    #[test]
    fn table_texture_sizes() {
        for (base, expected) in [(26usize, 156usize), (75, 450), (128, 768)] {
            let d = add_deltas(&fm(Array2::zeros((220, base)))).unwrap();
            let t = texturize(&d, TextureParams::default(), "x", None).unwrap();
            assert_eq!(t.dim(), expected);
        }
    }

    #[test]
    fn texture_std_is_population() {
        let frames = fm(Array2::from_shape_vec((2, 6), vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let t = texturize(&frames, TextureParams { window: 2, hop: 1 }, "x", None).unwrap();
        assert_eq!(t.values[[0, 0]], 3.0);
        assert_eq!(t.values[[0, 6]], 1.0);
    }

    proptest! {
        #[test]
        fn means_within_window_envelope(seed in 0u64..500, window in 1usize..20, hop in 1usize..5) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let frames = fm(Array2::from_shape_simple_fn((40, 6), || rng.gen_range(-5.0..5.0)));
            let p = TextureParams { window, hop };
            let t = texturize(&frames, p, "x", None).unwrap();
            for (i, row) in t.values.outer_iter().enumerate() {
                let (a, b) = p.frame_range(i);
                let block = frames.values.slice(s![a..b, ..]);
                for j in 0..6 {
                    let col: Array1<f64> = block.column(j).to_owned();
                    let lo = col.fold(f64::INFINITY, |m, &v| m.min(v));
                    let hi = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    prop_assert!(row[j] >= lo - 1e-12 && row[j] <= hi + 1e-12);
                }
            }
        }
    }
}
