//! RBF-kernel C-SVC trained with SMO, combined one-vs-one for multiclass.
//!
//! The binary solver uses second-order working set selection (as in libsvm)
//! without shrinking. Kernel rows are kept in a bounded LRU cache.

use std::collections::HashMap;
use std::rc::Rc;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

pub const SVM_C_GRID: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

/// Stopping tolerance on the maximal KKT violating pair.
pub const KKT_TOL: f64 = 1e-3;

const TAU: f64 = 1e-12;
const CACHE_BYTES: usize = 256 << 20;

fn sq_norms(x: ArrayView2<f64>) -> Array1<f64> {
    x.outer_iter().map(|r| r.dot(&r)).collect()
}

/// `K[a, b] = exp(-γ‖q_a − s_b‖²)` for every query row `a` and support row `b`.
pub fn rbf_kernel_matrix(q: ArrayView2<f64>, s: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    let qn = sq_norms(q);
    let sn = sq_norms(s);
    let mut k = q.dot(&s.t());
    for (mut row, &a) in k.outer_iter_mut().zip(qn.iter()) {
        for (v, &b) in row.iter_mut().zip(sn.iter()) {
            *v = (-gamma * (a + b - 2.0 * *v).max(0.0)).exp();
        }
    }
    k
}

struct QMatrix<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    norms: Array1<f64>,
    gamma: f64,
    cache: HashMap<usize, (Rc<[f64]>, u64)>,
    capacity: usize,
    clock: u64,
}

impl<'a> QMatrix<'a> {
    fn new(x: ArrayView2<'a, f64>, y: &'a [f64], gamma: f64) -> Self {
        let n = x.nrows().max(1);
        let capacity = (CACHE_BYTES / (n * std::mem::size_of::<f64>())).max(2);
        Self {
            norms: sq_norms(x),
            x,
            y,
            gamma,
            cache: HashMap::new(),
            capacity,
            clock: 0,
        }
    }

    /// Row `i` of `Q = (y yᵀ) ⊙ K`.
    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        if let Some(entry) = self.cache.get_mut(&i) {
            entry.1 = self.clock;
            return entry.0.clone();
        }
        let dots = self.x.dot(&self.x.row(i));
        let (ni, yi) = (self.norms[i], self.y[i]);
        let row: Rc<[f64]> = dots
            .iter()
            .zip(self.norms.iter())
            .zip(self.y)
            .map(|((&d, &nt), &yt)| yi * yt * (-self.gamma * (ni + nt - 2.0 * d).max(0.0)).exp())
            .collect();
        if self.cache.len() >= self.capacity {
            if let Some(&oldest) = self
                .cache
                .iter()
                .min_by_key(|(_, (_, stamp))| *stamp)
                .map(|(k, _)| k)
            {
                self.cache.remove(&oldest);
            }
        }
        self.cache.insert(i, (row.clone(), self.clock));
        row
    }
}

/// Dual solution of one binary problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve `min ½αᵀQα − eᵀα` s.t. `yᵀα = 0`, `0 ≤ α ≤ C` for labels `y ∈ {+1, −1}`.
pub fn solve_binary<'a>(x: ArrayView2<'a, f64>, y: &'a [f64], c: f64, gamma: f64, eps: f64) -> BinarySolution {
    let n = x.nrows();
    let mut q = QMatrix::new(x, y, gamma);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = (100 * n).max(10_000_000);
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        // maximal violating i
        let mut gmax = f64::NEG_INFINITY;
        let mut sel_i = None;
        for t in 0..n {
            let v = if y[t] > 0.0 {
                (!upper(alpha[t])).then(|| -grad[t])
            } else {
                (!lower(alpha[t])).then(|| grad[t])
            };
            if let Some(v) = v {
                if v >= gmax {
                    gmax = v;
                    sel_i = Some(t);
                }
            }
        }
        let Some(i) = sel_i else {
            converged = true;
            break;
        };
        let qi = q.row(i);
        // second-order choice of j
        let mut gmax2 = f64::NEG_INFINITY;
        let mut sel_j = None;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            let (movable, g, quad) = if y[t] > 0.0 {
                (!lower(alpha[t]), grad[t], 2.0 - 2.0 * y[i] * qi[t])
            } else {
                (!upper(alpha[t]), -grad[t], 2.0 + 2.0 * y[i] * qi[t])
            };
            if !movable {
                continue;
            }
            gmax2 = gmax2.max(g);
            let diff = gmax + g;
            if diff > 0.0 {
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best_obj {
                    best_obj = obj;
                    sel_j = Some(t);
                }
            }
        }
        let Some(j) = sel_j.filter(|_| gmax + gmax2 >= eps) else {
            converged = true;
            break;
        };
        iterations += 1;
        let qj = q.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let quad = (2.0 + 2.0 * qi[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (2.0 - 2.0 * qi[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
    }
    if !converged {
        warn!("SMO stopped at the iteration cap ({max_iter}) before reaching tolerance");
    }
    BinarySolution {
        rho: compute_rho(&alpha, &grad, y, c),
        alpha,
        iterations,
        converged,
    }
}

fn compute_rho(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for ((&a, &g), &yt) in alpha.iter().zip(grad).zip(y) {
        let yg = yt * g;
        if a >= c {
            if yt < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if a <= 0.0 {
            if yt > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

impl BinarySolution {
    /// Largest violation of the KKT conditions over the training points,
    /// recomputing decision values from the kernel directly.
    pub fn kkt_violation(&self, x: ArrayView2<f64>, y: &[f64], c: f64, gamma: f64) -> f64 {
        let k = rbf_kernel_matrix(x, x, gamma);
        let coef: Array1<f64> = self.alpha.iter().zip(y).map(|(a, y)| a * y).collect();
        let f = k.dot(&coef) - self.rho;
        let mut worst: f64 = 0.0;
        for t in 0..y.len() {
            let margin = y[t] * f[t];
            let v = if self.alpha[t] <= 0.0 {
                (1.0 - margin).max(0.0)
            } else if self.alpha[t] >= c {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}

/// One binary machine: `positive` wins when the decision value is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub positive: Label,
    pub negative: Label,
    #[serde(skip)]
    pub support: Array2<f64>,
    /// `α_i·y_i` for each support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySvm {
    pub fn decision(&self, q: ArrayView2<f64>, gamma: f64) -> Array1<f64> {
        if self.coef.is_empty() {
            return Array1::from_elem(q.nrows(), -self.rho);
        }
        rbf_kernel_matrix(q, self.support.view(), gamma).dot(&ArrayView1::from(&self.coef[..]))
            - self.rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub c: f64,
    pub gamma: f64,
    pub classes: Vec<Label>,
    pub machines: Vec<BinarySvm>,
    #[serde(skip)]
    pub dim: usize,
}

/// One-vs-one RBF SVM over every pair of classes present in `labels`.
pub fn train_svm(x: ArrayView2<f64>, labels: &[Label], c: f64, gamma: f64) -> Result<SvmModel> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    if !(c > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidParameter("C and gamma must be positive".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite training data".into()));
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let mut machines = Vec::new();
    for (a_idx, &pos) in classes.iter().enumerate() {
        for &neg in &classes[a_idx + 1..] {
            let rows: Vec<usize> = (0..labels.len())
                .filter(|&r| labels[r] == pos || labels[r] == neg)
                .collect();
            let sub = x.select(Axis(0), &rows);
            let y: Vec<f64> = rows
                .iter()
                .map(|&r| if labels[r] == pos { 1.0 } else { -1.0 })
                .collect();
            let sol = solve_binary(sub.view(), &y, c, gamma, KKT_TOL);
            let sv: Vec<usize> = (0..rows.len()).filter(|&t| sol.alpha[t] > 0.0).collect();
            machines.push(BinarySvm {
                positive: pos,
                negative: neg,
                support: sub.select(Axis(0), &sv),
                coef: sv.iter().map(|&t| sol.alpha[t] * y[t]).collect(),
                rho: sol.rho,
                iterations: sol.iterations,
                converged: sol.converged,
            });
        }
    }
    Ok(SvmModel {
        c,
        gamma,
        classes,
        machines,
        dim: x.ncols(),
    })
}

impl SvmModel {
    /// Winning label and its one-vs-one vote total for each row.
    ///
    /// Vote ties are broken by the summed decision values in favour of each
    /// class, then by the lowest label.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<(Label, usize)>> {
        if x.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.ncols(),
            });
        }
        let n = x.nrows();
        let k = self.classes.len();
        let mut votes = vec![vec![0usize; k]; n];
        let mut score = vec![vec![0f64; k]; n];
        let index = |l: Label| self.classes.binary_search(&l).expect("known class");
        for m in &self.machines {
            let d = m.decision(x, self.gamma);
            let (p, q) = (index(m.positive), index(m.negative));
            for r in 0..n {
                if d[r] > 0.0 {
                    votes[r][p] += 1;
                } else {
                    votes[r][q] += 1;
                }
                score[r][p] += d[r];
                score[r][q] -= d[r];
            }
        }
        Ok((0..n)
            .map(|r| {
                let best = (0..k)
                    .max_by(|&a, &b| {
                        votes[r][a]
                            .cmp(&votes[r][b])
                            .then(score[r][a].total_cmp(&score[r][b]))
                            .then(b.cmp(&a))
                    })
                    .expect("at least two classes");
                (self.classes[best], votes[r][best])
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<Label>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((2 * n, 2));
        let mut labels = Vec::new();
        for i in 0..2 * n {
            let c = if i < n { -3.0 } else { 3.0 };
            x[[i, 0]] = c + noise.sample(&mut rng);
            x[[i, 1]] = c + noise.sample(&mut rng);
            labels.push(usize::from(i >= n));
        }
        (x, labels)
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (x, labels) = blobs(50, 1);
        let m = train_svm(x.view(), &labels, 1.0, 0.5).unwrap();
        let pred: Vec<Label> = m.predict(x.view()).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(pred, labels);
    }

    #[test]
    fn xor_is_shattered() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let labels = vec![0, 0, 1, 1];
        let m = train_svm(x.view(), &labels, 1000.0, 0.5).unwrap();
        let pred: Vec<Label> = m.predict(x.view()).unwrap().into_iter().map(|p| p.0).collect();
        assert_eq!(pred, labels);
    }

    #[test]
    fn kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::from_shape_simple_fn((120, 3), || noise.sample(&mut rng));
        let y: Vec<f64> = x
            .outer_iter()
            .map(|r| if r[0] + 0.5 * r[1] * r[2] > 0.0 { 1.0 } else { -1.0 })
            .collect();
        for c in [0.1, 1.0, 10.0, 1000.0] {
            let sol = solve_binary(x.view(), &y, c, 1.0 / 3.0, KKT_TOL);
            assert!(sol.converged);
            let v = sol.kkt_violation(x.view(), &y, c, 1.0 / 3.0);
            assert!(v <= KKT_TOL, "C={c}: violation {v}");
            let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
            assert!(balance.abs() < 1e-9);
            assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        }
    }

    #[test]
    fn multiclass_one_vs_one() {
        let centers = [(-4.0, 0.0), (4.0, 0.0), (0.0, 5.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 0.6).unwrap();
        let mut x = Array2::zeros((90, 2));
        let mut labels = Vec::new();
        for i in 0..90 {
            let c = centers[i % 3];
            x[[i, 0]] = c.0 + noise.sample(&mut rng);
            x[[i, 1]] = c.1 + noise.sample(&mut rng);
            labels.push(i % 3 + 10);
        }
        let m = train_svm(x.view(), &labels, 10.0, 0.5).unwrap();
        assert_eq!(m.machines.len(), 3);
        assert_eq!(m.classes, vec![10, 11, 12]);
        let p = m.predict(array![[-4.0, 0.0], [4.0, 0.1], [0.0, 5.0]].view()).unwrap();
        assert_eq!(p, vec![(10, 2), (11, 2), (12, 2)]);
    }

    #[test]
    fn errors() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(train_svm(x.view(), &[1, 1], 1.0, 1.0), Err(Error::SingleClass)));
        assert!(train_svm(x.view(), &[0, 1], 0.0, 1.0).is_err());
        assert!(train_svm(x.view(), &[0], 1.0, 1.0).is_err());
        let m = train_svm(x.view(), &[0, 1], 1.0, 1.0).unwrap();
        assert!(m.predict(array![[0.0, 1.0]].view()).is_err());
    }

    #[test]
    fn kernel_matrix_values() {
        let k = rbf_kernel_matrix(array![[0.0, 0.0]].view(), array![[1.0, 1.0], [0.0, 0.0]].view(), 0.5);
        assert!((k[[0, 0]] - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(k[[0, 1]], 1.0);
    }
}
