use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-wise z-score parameters fit on training textures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns whose variance was zero; their std is stored as 1.
    pub constant_columns: Vec<usize>,
}

pub fn fit_standardizer(train: ArrayView2<f64>) -> Result<Standardizer> {
    if train.nrows() == 0 {
        return Err(Error::EmptyInput("cannot fit a standardizer on no rows".into()));
    }
    if train.nrows() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: train.nrows(),
            unit: "rows",
        });
    }
    let means: Array1<f64> = train.mean_axis(Axis(0)).expect("non-empty");
    let var = train.var_axis(Axis(0), 0.0);
    let mut constant_columns = Vec::new();
    let stds = var
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let sd = v.sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                constant_columns.push(j);
                1.0
            }
        })
        .collect();
    Ok(Standardizer {
        means: means.to_vec(),
        stds,
        constant_columns,
    })
}

impl Standardizer {
    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    #[test]
    fn two_point_column() {
        let s = fit_standardizer(array![[2.0], [4.0]].view()).unwrap();
        assert_eq!(s.means, vec![3.0]);
        assert_eq!(s.stds, vec![1.0]);
        assert!(s.constant_columns.is_empty());
    }

    #[test]
    fn constant_column_flagged() {
        let s = fit_standardizer(array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]].view()).unwrap();
        assert_eq!(s.constant_columns, vec![1]);
        assert_eq!(s.stds[1], 1.0);
        let t = s.transform(array![[2.0, 5.0]].view()).unwrap();
        assert_eq!(t[[0, 1]], 0.0);
    }

    #[test]
    fn self_application_is_standard() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((50, 4), || rng.gen_range(-10.0..30.0));
        let s = fit_standardizer(x.view()).unwrap();
        let z = s.transform(x.view()).unwrap();
        for col in z.columns() {
            assert!(col.mean().unwrap().abs() < 1e-9);
            assert!((col.var(0.0).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn test_data_uses_train_parameters() {
        let train = array![[0.0], [2.0]];
        let test = array![[10.0], [12.0]];
        let s = fit_standardizer(train.view()).unwrap();
        let z = s.transform(test.view()).unwrap();
        assert!(z.mean().unwrap() > 5.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fit_standardizer(Array2::<f64>::zeros((0, 3)).view()),
            Err(Error::EmptyInput(_))
        ));
        assert!(fit_standardizer(Array2::<f64>::zeros((1, 3)).view()).is_err());
        let s = fit_standardizer(Array2::<f64>::zeros((2, 3)).view()).unwrap();
        assert!(s.transform(Array2::<f64>::zeros((2, 2)).view()).is_err());
    }
}
