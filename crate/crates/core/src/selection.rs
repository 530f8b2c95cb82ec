//! Per-track texture selection: LINSPACE, KMEANSC, FTS and ALL.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textures::TextureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Fts,
    Linspace,
    Kmeansc,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectorSpec {
    pub kind: SelectorKind,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    5
}

/// Values of `k` evaluated for LINSPACE and KMEANSC.
pub const K_GRID: [usize; 3] = [5, 20, 40];

impl SelectorSpec {
    pub fn fts() -> Self {
        Self {
            kind: SelectorKind::Fts,
            k: 1,
            seed: 0,
        }
    }

    pub fn all() -> Self {
        Self {
            kind: SelectorKind::All,
            k: 1,
            seed: 0,
        }
    }

    pub fn linspace(k: usize) -> Self {
        Self {
            kind: SelectorKind::Linspace,
            k,
            seed: 0,
        }
    }

    pub fn kmeansc(k: usize, seed: u64) -> Self {
        Self {
            kind: SelectorKind::Kmeansc,
            k,
            seed,
        }
    }

    /// Textures kept for a track holding `m` of them.
    pub fn budget(&self, m: usize) -> usize {
        match self.kind {
            SelectorKind::Fts => 1,
            SelectorKind::All => m,
            SelectorKind::Linspace | SelectorKind::Kmeansc => self.k.min(m),
        }
    }
}

impl fmt::Display for SelectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SelectorKind::Fts => write!(f, "FTS"),
            SelectorKind::All => write!(f, "ALL"),
            SelectorKind::Linspace => write!(f, "LINSPACE{}", self.k),
            SelectorKind::Kmeansc => write!(f, "KMEANSC{}", self.k),
        }
    }
}

impl FromStr for SelectorSpec {
    type Err = Error;

    /// Parses `fts`, `all`, `linspace:K`, `kmeansc:K` and the report names (`KMEANSC5`).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, k) = match lower.split_once(':') {
            Some((n, k)) => (n.to_string(), Some(k.to_string())),
            None => {
                let split = lower
                    .find(|c: char| c.is_ascii_digit())
                    .unwrap_or(lower.len());
                let (n, k) = lower.split_at(split);
                (n.to_string(), (!k.is_empty()).then(|| k.to_string()))
            }
        };
        let parse_k = |k: Option<String>| -> Result<usize> {
            let k = k.ok_or_else(|| Error::InvalidParameter(format!("selector '{s}' needs k")))?;
            k.parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("bad k in selector '{s}'")))
        };
        match name.as_str() {
            "fts" => Ok(Self::fts()),
            "all" => Ok(Self::all()),
            "linspace" => Ok(Self::linspace(parse_k(k)?)),
            "kmeansc" | "kmeans" => Ok(Self::kmeansc(parse_k(k)?, 0)),
            _ => Err(Error::InvalidParameter(format!("unknown selector '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after each assignment step, ending with the final inertia.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.gen_range(0..n));
    let mut d2: Vec<f64> = points
        .outer_iter()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = i;
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick
        } else {
            // all remaining points coincide with a chosen one
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(next)));
        }
    }
    points.select(Axis(0), &chosen)
}

/// Means of assigned points. Empty clusters take the point farthest from its own centroid.
fn update_centroids(points: ArrayView2<f64>, assignments: &mut [usize], k: usize) -> Array2<f64> {
    let dim = points.ncols();
    loop {
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (p, &a) in points.outer_iter().zip(assignments.iter()) {
            sums.row_mut(a).zip_mut_with(&p, |s, &v| *s += v);
            counts[a] += 1;
        }
        for (mut row, &c) in sums.outer_iter_mut().zip(&counts) {
            if c > 0 {
                row.mapv_inplace(|v| v / c as f64);
            }
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return sums;
        };
        let donor = points
            .outer_iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, sums.row(assignments[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        match donor {
            Some((i, _)) => assignments[i] = empty,
            None => return sums,
        }
    }
}

fn inertia_of(points: ArrayView2<f64>, centroids: &Array2<f64>, assignments: &[usize]) -> f64 {
    points
        .outer_iter()
        .zip(assignments)
        .map(|(p, &a)| sq_dist(p, centroids.row(a)))
        .sum()
}

/// Lloyd's algorithm from k-means++ seeding.
pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansResult> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("k-means needs at least one point".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must be in [1, {n}]"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.outer_iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            inertia += d;
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let updated = update_centroids(points, &mut assignments, k);
        let shift = updated
            .outer_iter()
            .zip(centroids.outer_iter())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        if shift < tol {
            break;
        }
    }
    centroids = update_centroids(points, &mut assignments, k);
    let inertia = inertia_of(points, &centroids, &assignments);
    history.push(inertia);
    Ok(KMeansResult {
        centroids,
        assignments,
        inertia,
        iterations,
        inertia_history: history,
    })
}

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

/// 0-based rows chosen by LINSPACE: `t_s, t_2s, …, t_ks` with `s = ⌊m/k⌋`, 1-based.
pub fn linspace_indices(m: usize, k: usize) -> Vec<usize> {
    if m <= k {
        return (0..m).collect();
    }
    let s = m / k;
    (1..=k).map(|i| (i * s).min(m) - 1).collect()
}

/// Reduce a track's textures according to `spec`.
pub fn select(textures: &TextureMatrix, spec: &SelectorSpec) -> Result<TextureMatrix> {
    let m = textures.n_textures();
    if m == 0 {
        return Err(Error::EmptyInput(format!(
            "track {} has no textures",
            textures.track_id
        )));
    }
    let rows = match spec.kind {
        SelectorKind::All | SelectorKind::Fts => textures.values.clone(),
        SelectorKind::Linspace | SelectorKind::Kmeansc if spec.k < 1 => {
            return Err(Error::InvalidParameter("k must be at least 1".into()))
        }
        _ if m <= spec.k => textures.values.clone(),
        SelectorKind::Linspace => textures
            .values
            .select(Axis(0), &linspace_indices(m, spec.k)),
        SelectorKind::Kmeansc => {
            kmeans(
                textures.values.view(),
                spec.k,
                spec.seed,
                KMEANS_MAX_ITER,
                KMEANS_TOL,
            )?
            .centroids
        }
    };
    Ok(TextureMatrix::from_parts(
        rows,
        textures.track_id.clone(),
        textures.label,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.gen_range(-3.0..3.0))
    }

    #[test]
    fn k1_is_column_mean() {
        let x = random_points(40, 5, 1);
        let r = kmeans(x.view(), 1, 0, 300, 1e-6).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        for (a, b) in r.centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let ss: f64 = x.outer_iter().map(|p| sq_dist(p, mean.view())).sum();
        assert!((r.inertia - ss).abs() < 1e-9);
    }

    #[test]
    fn two_blobs_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((200, 2));
        for i in 0..200 {
            let c = if i < 100 { 0.0 } else { 10.0 };
            x[[i, 0]] = c + noise.sample(&mut rng);
            x[[i, 1]] = c + noise.sample(&mut rng);
        }
        // brute-force blob means
        let m0 = x.slice(ndarray::s![..100, ..]).mean_axis(Axis(0)).unwrap();
        let m1 = x.slice(ndarray::s![100.., ..]).mean_axis(Axis(0)).unwrap();
        let r = kmeans(x.view(), 2, 3, 300, 1e-6).unwrap();
        let mut cs: Vec<_> = r.centroids.outer_iter().map(|c| c.to_owned()).collect();
        cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        for (c, (m, truth)) in cs.iter().zip([(&m0, 0.0), (&m1, 10.0)]) {
            assert!(sq_dist(c.view(), m.view()).sqrt() < 1e-9);
            assert!((c[0] - truth).abs() < 0.1 && (c[1] - truth).abs() < 0.1);
        }
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let x = random_points(12, 3, 2);
        let r = kmeans(x.view(), 12, 5, 300, 1e-6).unwrap();
        assert!(r.inertia.abs() < 1e-12);
        for p in x.outer_iter() {
            assert!(r.centroids.outer_iter().any(|c| sq_dist(p, c) < 1e-20));
        }
    }

    #[test]
    fn kmeans_errors() {
        let x = random_points(3, 2, 0);
        assert!(kmeans(x.view(), 4, 0, 300, 1e-6).is_err());
        assert!(kmeans(x.view(), 0, 0, 300, 1e-6).is_err());
        assert!(kmeans(Array2::<f64>::zeros((0, 2)).view(), 1, 0, 300, 1e-6).is_err());
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let x = Array2::from_elem((10, 3), 1.0);
        let r = kmeans(x.view(), 3, 0, 300, 1e-6).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(r.assignments.iter().all(|&a| a < 3));
    }

    #[test]
    fn kmeans_invariants_on_random_data() {
        for seed in 0..30 {
            let x = random_points(60, 4, seed);
            let k = 1 + (seed as usize % 7);
            let r = kmeans(x.view(), k, seed, 300, 1e-6).unwrap();
            assert!(r.inertia >= 0.0);
            assert!(r.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
            assert!(r.assignments.iter().all(|&a| a < k));
            for j in 0..k {
                let members: Vec<usize> = (0..60).filter(|&i| r.assignments[i] == j).collect();
                assert!(!members.is_empty());
                for c in 0..4 {
                    let lo = members.iter().map(|&i| x[[i, c]]).fold(f64::INFINITY, f64::min);
                    let hi = members.iter().map(|&i| x[[i, c]]).fold(f64::NEG_INFINITY, f64::max);
                    assert!(r.centroids[[j, c]] >= lo - 1e-12 && r.centroids[[j, c]] <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn kmeans_deterministic() {
        let x = random_points(80, 6, 9);
        let a = kmeans(x.view(), 5, 42, 300, 1e-6).unwrap();
        let b = kmeans(x.view(), 5, 42, 300, 1e-6).unwrap();
        assert_eq!(a, b);
    }

    fn tm(m: usize) -> TextureMatrix {
        let values = Array2::from_shape_fn((m, 6), |(i, j)| (i * 10 + j) as f64);
        TextureMatrix::new(values, "t", Some(0)).unwrap()
    }

    #[test]
    fn linspace_rows() {
        assert_eq!(
            linspace_indices(107, 5).iter().map(|i| i + 1).collect::<Vec<_>>(),
            vec![21, 42, 63, 84, 105]
        );
        assert_eq!(linspace_indices(5, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(linspace_indices(3, 5), vec![0, 1, 2]);
        assert_eq!(linspace_indices(10, 5), vec![1, 3, 5, 7, 9]);
        let t = tm(107);
        let s = select(&t, &SelectorSpec::linspace(5)).unwrap();
        assert_eq!(s.values.row(0), t.values.row(20));
        assert_eq!(s.label, Some(0));
    }

    #[test]
    fn kmeansc_k1_is_mean() {
        let t = tm(30);
        let s = select(&t, &SelectorSpec::kmeansc(1, 7)).unwrap();
        let mean = t.values.mean_axis(Axis(0)).unwrap();
        assert!(s.values.row(0).iter().zip(mean.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn select_row_counts() {
        let t = tm(50);
        for k in [1usize, 5, 20, 40, 60] {
            assert_eq!(select(&t, &SelectorSpec::linspace(k)).unwrap().n_textures(), k.min(50));
            assert_eq!(select(&t, &SelectorSpec::kmeansc(k, 0)).unwrap().n_textures(), k.min(50));
        }
        assert_eq!(select(&t, &SelectorSpec::all()).unwrap().n_textures(), 50);
        assert!(select(&t, &SelectorSpec::linspace(0)).is_err());
        assert!(select(&t, &SelectorSpec::kmeansc(0, 0)).is_err());
    }

    #[test]
    fn kmeansc_centroids_move_continuously() {
        // Centroids are synthetic points: a small perturbation of the inputs moves
        // them by a comparably small amount instead of snapping to input rows.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = Array2::from_shape_simple_fn((60, 6), || rng.gen_range(0.0..1.0));
        let t = TextureMatrix::new(base.clone(), "a", None).unwrap();
        let a = select(&t, &SelectorSpec::kmeansc(3, 1)).unwrap();
        assert!(a.values.outer_iter().any(|c| base.outer_iter().all(|r| sq_dist(c, r) > 1e-12)));
        let bumped = TextureMatrix::new(&base + 1e-6, "a", None).unwrap();
        let b = select(&bumped, &SelectorSpec::kmeansc(3, 1)).unwrap();
        let moved = (&b.values - &a.values).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(moved > 0.0 && moved < 1e-5);
    }

    #[test]
    fn selector_parse_and_display() {
        assert_eq!("kmeansc:5".parse::<SelectorSpec>().unwrap(), SelectorSpec::kmeansc(5, 0));
        assert_eq!("LINSPACE20".parse::<SelectorSpec>().unwrap(), SelectorSpec::linspace(20));
        assert_eq!("fts".parse::<SelectorSpec>().unwrap(), SelectorSpec::fts());
        assert_eq!("ALL".parse::<SelectorSpec>().unwrap(), SelectorSpec::all());
        assert!("linspace".parse::<SelectorSpec>().is_err());
        assert!("median:3".parse::<SelectorSpec>().is_err());
        assert_eq!(SelectorSpec::kmeansc(5, 3).to_string(), "KMEANSC5");
        assert_eq!(SelectorSpec::kmeansc(5, 0).budget(100), 5);
        assert_eq!(SelectorSpec::all().budget(100), 100);
    }
}
