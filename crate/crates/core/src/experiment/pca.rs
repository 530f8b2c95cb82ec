use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::textures::TextureMatrix;

/// Principal axes of z-scored data, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// One column per component.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Each component's largest-magnitude loading is made positive. Components
/// beyond the covariance rank are dropped with a warning.
pub fn fit_pca(x: ArrayView2<f64>, n_components: usize) -> Result<Pca> {
    let (n, d) = x.dim();
    if n_components == 0 {
        return Err(Error::InvalidParameter("need at least one component".into()));
    }
    if n <= n_components {
        return Err(Error::TooShort {
            needed: n_components + 1,
            got: n,
            unit: "rows",
        });
    }
    let means = x.mean_axis(Axis(0)).expect("rows > 0");
    let stds: Vec<f64> = x
        .var_axis(Axis(0), 0.0)
        .iter()
        .map(|v| if *v > 0.0 { v.sqrt() } else { 1.0 })
        .collect();
    let z = standardize(x, means.as_slice().expect("contiguous"), &stds);
    let cov = z.t().dot(&z) / n as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order.iter().filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(1e-300)).count();
    let kept = n_components.min(rank).min(d);
    if kept < n_components {
        warn!("covariance rank {rank} allows only {kept} of {n_components} components");
    }
    if kept == 0 {
        return Err(Error::Degenerate("data has no variance".into()));
    }
    let mut components = Array2::zeros((d, kept));
    let mut eigenvalues = Vec::with_capacity(kept);
    for (c, &i) in order.iter().take(kept).enumerate() {
        let v = eig.eigenvectors.column(i);
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            components[[r, c]] = sign * v[r];
        }
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(Pca {
        means: means.to_vec(),
        stds,
        components,
        eigenvalues,
    })
}

fn standardize(x: ArrayView2<f64>, means: &[f64], stds: &[f64]) -> Array2<f64> {
    let mut z = x.to_owned();
    for mut row in z.outer_iter_mut() {
        for ((v, m), s) in row.iter_mut().zip(means).zip(stds) {
            *v = (*v - m) / s;
        }
    }
    z
}

impl Pca {
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                got: x.ncols(),
            });
        }
        Ok(standardize(x, &self.means, &self.stds).dot(&self.components))
    }
}

/// Project stacked textures and write `track_id,label,pc1,…` rows.
pub fn pca_emit(
    tracks: &[TextureMatrix],
    label_names: &[String],
    n_components: usize,
    out: impl AsRef<Path>,
) -> Result<Pca> {
    let views: Vec<_> = tracks.iter().map(|t| t.values.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Format(e.to_string()))?;
    let pca = fit_pca(x.view(), n_components)?;
    let proj = pca.transform(x.view())?;
    let mut w = csv::Writer::from_path(out.as_ref())?;
    let mut header = vec!["track_id".to_string(), "label".to_string()];
    header.extend((1..=pca.components.ncols()).map(|i| format!("pc{i}")));
    w.write_record(&header)?;
    let mut row = 0;
    for t in tracks {
        let label = t
            .label
            .map(|l| label_names.get(l).cloned().unwrap_or_else(|| l.to_string()))
            .unwrap_or_default();
        for _ in 0..t.n_textures() {
            let mut rec = vec![t.track_id.clone(), label.clone()];
            rec.extend(proj.row(row).iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
            row += 1;
        }
    }
    w.flush().map_err(|e| Error::io(out.as_ref(), e))?;
    Ok(pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Cyclic Jacobi eigenvalues of a small symmetric matrix.
    fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[[i, j]].powi(2)).sum();
            if off < 1e-28 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[[k, p]], a[[k, q]]);
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn axis_aligned_first_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // unequal spread in raw units; standardization equalizes it, so add correlation
        let x = Array2::from_shape_fn((200, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let mut y = x.clone();
        for mut r in y.outer_iter_mut() {
            r[1] = 0.9 * r[0] + 0.1 * r[1];
        }
        let p = fit_pca(y.view(), 2).unwrap();
        assert!(p.eigenvalues[0] > p.eigenvalues[1]);
        let c = p.components.column(0);
        assert!((c[0] - c[1]).abs() < 1e-6 && c[0] > 0.0);
    }

    #[test]
    fn projection_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((50, 4), || rng.gen_range(-3.0..7.0));
        let p = fit_pca(x.view(), 2).unwrap();
        let proj = p.transform(x.view()).unwrap();
        for m in proj.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_error_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = Array2::from_shape_simple_fn((80, 6), || rng.sample::<f64, _>(StandardNormal));
        let mix = Array2::from_shape_simple_fn((6, 6), || rng.gen_range(-1.0..1.0));
        let x = base.dot(&mix);
        let p = fit_pca(x.view(), 2).unwrap();
        let means = x.mean_axis(Axis(0)).unwrap();
        let z = standardize(x.view(), means.as_slice().unwrap(), &p.stds);
        let recon = p.transform(x.view()).unwrap().dot(&p.components.t());
        let err = (&z - &recon).mapv(|v| v * v).sum() / 80.0;
        let cov = z.t().dot(&z) / 80.0;
        let ev = jacobi_eigenvalues(cov);
        let oracle: f64 = ev[2..].iter().sum();
        assert!((err - oracle).abs() < 1e-8, "{err} vs {oracle}");
        assert!((p.eigenvalues[0] - ev[0]).abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_drops_components() {
        let x = Array2::from_shape_fn((10, 3), |(i, j)| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        let p = fit_pca(x.view(), 2).unwrap();
        assert_eq!(p.components.ncols(), 1);
        assert!(fit_pca(x.view(), 10).is_err());
    }

    #[test]
    fn csv_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tracks: Vec<_> = (0..2)
            .map(|t| {
                let v = Array2::from_shape_simple_fn((5, 6), || rng.gen::<f64>());
                TextureMatrix::new(v, format!("t{t}"), Some(t)).unwrap()
            })
            .collect();
        let out = dir.path().join("pca.csv");
        pca_emit(&tracks, &["rock".into(), "jazz".into()], 2, &out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "track_id,label,pc1,pc2");
        assert_eq!(lines.len(), 11);
        assert!(lines[6].starts_with("t1,jazz,"));
    }
}
