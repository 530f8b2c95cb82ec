use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

pub const ANOVA_FRACTIONS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    /// Sorted, unique column indices that are kept.
    pub kept_indices: Vec<usize>,
    pub fraction: f64,
}

impl FeatureMask {
    pub fn identity(n: usize) -> Self {
        Self {
            kept_indices: (0..n).collect(),
            fraction: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if let Some(&max) = self.kept_indices.last() {
            if max >= x.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: max + 1,
                    got: x.ncols(),
                });
            }
        }
        Ok(x.select(Axis(1), &self.kept_indices))
    }
}

/// One-way ANOVA F statistic of each column across the label groups.
///
/// A column with zero within-group variance scores `+inf` when the group means
/// differ and `0` when the column is constant.
pub fn anova_f_scores(x: ArrayView2<f64>, labels: &[Label]) -> Result<Vec<f64>> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    let mut classes: Vec<Label> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let k = classes.len();
    let n = x.nrows();
    let group: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();
    let mut counts = vec![0f64; k];
    for &g in &group {
        counts[g] += 1.0;
    }
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    for (row, &g) in x.outer_iter().zip(&group) {
        sums.row_mut(g).zip_mut_with(&row, |s, &v| *s += v);
    }
    let grand = x.mean_axis(Axis(0)).expect("non-empty");
    let mut scores = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let group_means: Vec<f64> = (0..k).map(|g| sums[[g, j]] / counts[g]).collect();
        let ssb: f64 = (0..k)
            .map(|g| counts[g] * (group_means[g] - grand[j]).powi(2))
            .sum();
        let ssw: f64 = x
            .column(j)
            .iter()
            .zip(&group)
            .map(|(v, &g)| (v - group_means[g]).powi(2))
            .sum();
        let df_between = (k - 1) as f64;
        let df_within = n.saturating_sub(k) as f64;
        let f = if ssw <= 1e-300 || df_within == 0.0 {
            if ssb > 1e-300 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            (ssb / df_between) / (ssw / df_within)
        };
        scores.push(if f.is_nan() { 0.0 } else { f });
    }
    Ok(scores)
}

/// Keep the `ceil(fraction·n)` columns with the highest F statistic; ties go to the lower index.
pub fn anova_mask(x: ArrayView2<f64>, labels: &[Label], fraction: f64) -> Result<FeatureMask> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fraction {fraction} not in (0, 1]"
        )));
    }
    let scores = anova_f_scores(x, labels)?;
    let n = scores.len();
    let keep = ((fraction * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    Ok(FeatureMask {
        kept_indices: kept,
        fraction,
    })
}
