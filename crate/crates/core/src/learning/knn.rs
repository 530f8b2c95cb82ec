use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

pub const KNN_K_GRID: [usize; 5] = [1, 3, 5, 7, 9];

/// Brute-force Euclidean K-nearest-neighbour classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    #[serde(skip)]
    pub data: Array2<f64>,
    pub labels: Vec<Label>,
}

pub fn train_knn(x: ArrayView2<f64>, labels: &[Label], k: usize) -> Result<Knn> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: labels.len(),
        });
    }
    if k == 0 || k > x.nrows() {
        return Err(Error::InvalidParameter(format!(
            "K = {k} must be in [1, {}]",
            x.nrows()
        )));
    }
    Ok(Knn {
        k,
        data: x.to_owned(),
        labels: labels.to_vec(),
    })
}

#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Knn {
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Indices of the K nearest training rows, nearest first; equal distances favour lower indices.
    pub fn neighbors(&self, q: ArrayView1<f64>) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(self.k + 1);
        for (index, row) in self.data.outer_iter().enumerate() {
            let dist: f64 = row.iter().zip(q.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            let c = Candidate { dist, index };
            if heap.len() < self.k {
                heap.push(c);
            } else if c < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(c);
            }
        }
        heap.into_sorted_vec().into_iter().map(|c| c.index).collect()
    }

    /// Majority label of the neighbours and its vote count; vote ties go to the smallest label.
    pub fn predict_one(&self, q: ArrayView1<f64>) -> (Label, usize) {
        let mut votes: Vec<(Label, usize)> = Vec::new();
        for i in self.neighbors(q) {
            let l = self.labels[i];
            match votes.iter_mut().find(|(v, _)| *v == l) {
                Some(e) => e.1 += 1,
                None => votes.push((l, 1)),
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("k >= 1")
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<(Label, usize)>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        Ok(x.outer_iter().map(|q| self.predict_one(q)).collect())
    }
}
