use super::cloud::PointCloud;
use super::kernels::{chamfer_flat, nearest};
use crate::error::{Error, Result};

/// Symmetric mean nearest-neighbour distance (non-squared, averaged per cloud).
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    chamfer_flat(&a.flat(), &b.flat())
}

/// One-sided mean distance from each point of `from` to its nearest point in `to`.
pub fn directed_chamfer(from: &PointCloud, to: &PointCloud) -> f64 {
    let d = nearest(&from.flat(), &to.flat());
    d.iter().map(|x| x.1).sum::<f64>() / d.len() as f64
}

/// Row-major matrix of non-negative distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `(argmin, min)` of a row; ties resolve to the lowest column.
    pub fn row_min(&self, i: usize) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, &v) in self.row(i).iter().enumerate() {
            if v < best.1 {
                best = (j, v);
            }
        }
        best
    }

    /// Copy with the listed columns removed.
    pub fn without_columns(&self, drop: &[usize]) -> Self {
        let keep: Vec<usize> = (0..self.cols).filter(|j| !drop.contains(j)).collect();
        Self::from_fn(self.rows, keep.len(), |i, j| self.get(i, keep[j]))
    }
}

/// Entry `(i, j)` is the distance from point `i` of `a` to the closest point of `parts[j]`.
pub fn pairwise_distances(a: &PointCloud, parts: &[PointCloud]) -> Result<DistanceMatrix> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("pairwise_distances needs at least one part".into()));
    }
    let flat_a = a.flat();
    let cols: Vec<Vec<(usize, f64)>> = parts.iter().map(|p| nearest(&flat_a, &p.flat())).collect();
    Ok(DistanceMatrix::from_fn(a.len(), parts.len(), |i, j| cols[j][i].1))
}
