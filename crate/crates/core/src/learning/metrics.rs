use statrs::distribution::{ContinuousCDF, StudentsT};

use super::Label;
use crate::error::{Error, Result};

/// Support-weighted mean of per-class F1 over the classes present in `y_true`.
pub fn weighted_f1(y_true: &[Label], y_pred: &[Label]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("no predictions to score".into()));
    }
    let mut classes: Vec<Label> = y_true.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let total = y_true.len() as f64;
    let mut score = 0.0;
    for &c in &classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                _ => {}
            }
        }
        let support = (tp + fn_) as f64;
        let denom = 2 * tp + fp + fn_;
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        score += support / total * f1;
    }
    Ok(score)
}

/// `m[true][pred]` counts for labels in `0..n_classes`.
pub fn confusion_matrix(y_true: &[Label], y_pred: &[Label], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidParameter(format!(
                "label {} outside 0..{n_classes}",
                t.max(p)
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Two-tailed p-value of the paired Student's t statistic.
///
/// Identical samples give `p = 1`. A constant non-zero difference has no
/// variance and is reported as degenerate.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: a.len(),
            unit: "paired scores",
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(1.0);
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var.sqrt() <= 1e-12 * mean.abs() {
        return Err(Error::Degenerate(
            "paired differences have zero variance".into(),
        ));
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok((2.0 * dist.cdf(-t.abs())).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_is_one() {
        assert_eq!(weighted_f1(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
    }

    #[test]
    fn support_weighting() {
        // class 0: support 3, F1 = 1; class 1: support 1, F1 = 0
        let t = [0, 0, 0, 1];
        let p = [0, 0, 0, 2];
        assert!((weighted_f1(&t, &p).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn relabeling_invariance() {
        let t = [0, 1, 1, 2, 2, 2, 0, 1];
        let p = [0, 2, 1, 2, 0, 2, 0, 1];
        let perm = |v: &[usize]| v.iter().map(|&l| [7, 3, 5][l]).collect::<Vec<_>>();
        let a = weighted_f1(&t, &p).unwrap();
        let b = weighted_f1(&perm(&t), &perm(&p)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn f1_errors() {
        assert!(weighted_f1(&[0], &[0, 1]).is_err());
        assert!(weighted_f1(&[], &[]).is_err());
    }

    #[test]
    fn confusion_counts() {
        let m = confusion_matrix(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(m, vec![vec![1, 1], vec![0, 1]]);
        assert!(confusion_matrix(&[3], &[0], 2).is_err());
    }

    /// Two-tailed p-value by trapezoidal integration of the Student t density.
    fn t_oracle(t: f64, df: f64) -> f64 {
        let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
        let pdf = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let steps = 200_000;
        let h = t.abs() / steps as f64;
        let mut area = 0.5 * (pdf(0.0) + pdf(t.abs()));
        for i in 1..steps {
            area += pdf(i as f64 * h);
        }
        1.0 - 2.0 * area * h
    }

    fn ln_gamma(x: f64) -> f64 {
        // Γ(n/2) for the small half-integers used here
        let mut v = if (x * 2.0).round() as i64 % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
        let mut y = if v == 1.0 { 1.0 } else { 0.5 };
        while y < x - 1e-9 {
            v *= y;
            y += 1.0;
        }
        v.ln()
    }

    #[test]
    fn hand_computed_triple() {
        let p = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        let t = 2.0 / (1.0f64 / 3.0).sqrt();
        assert!((t - 3.464).abs() < 1e-3);
        let oracle = t_oracle(t, 2.0);
        assert!((p - oracle).abs() < 1e-6, "{p} vs {oracle}");
        assert!((p - 0.074).abs() < 1e-3);
    }

    #[test]
    fn degenerate_cases() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 0.5).collect();
        assert!(matches!(paired_t_test(&a, &b), Err(Error::Degenerate(_))));
        assert_eq!(paired_t_test(&b, &b).unwrap(), 1.0);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
    }
}
