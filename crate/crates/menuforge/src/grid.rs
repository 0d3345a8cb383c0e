//! Axis-product value grids with l-inf covering guarantees.
//!
//! A grid stores sorted axis points per (bidder, item). Uniform grids
//! include both endpoints so every domain point lies within epsilon/2 of a
//! grid point in l-inf distance; pruned grids keep that property with
//! epsilon defined as the largest adjacent gap.

use crate::scalar::Real;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

/// Sorted per-bidder, per-item axis points spanning [0, v_max].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ValueGrid<R: Real> {
    /// axes[bidder][item] -> ascending points.
    pub axes: Vec<Vec<Vec<R>>>,
    pub v_max: R,
}

/// Uniform grid with `points_per_axis` points per item axis, endpoints
/// included, shared by all `n` bidders.
pub fn make_grid<R: Real>(v_max: R, m: usize, n: usize, points_per_axis: usize) -> ValueGrid<R> {
    assert!(points_per_axis >= 2, "need at least both endpoints");
    assert!(n >= 1 && m >= 1);
    let step = v_max / R::real((points_per_axis - 1) as f64);
    let axis: Vec<R> = (0..points_per_axis)
        .map(|t| {
            if t + 1 == points_per_axis {
                v_max
            } else {
                step * R::real(t as f64)
            }
        })
        .collect();
    ValueGrid {
        axes: vec![vec![axis; m]; n],
        v_max,
    }
}

/// Two-point grid {a, b} per axis for discrete two-point value domains.
pub fn make_grid_discrete<R: Real>(points: &[R], m: usize, n: usize) -> ValueGrid<R> {
    assert!(points.len() >= 2);
    let mut axis = points.to_vec();
    axis.sort_by(|x, y| x.partial_cmp(y).expect("finite grid points"));
    let v_max = *axis.last().expect("nonempty");
    ValueGrid {
        axes: vec![vec![axis; m]; n],
        v_max,
    }
}

impl<R: Real> ValueGrid<R> {
    pub fn n(&self) -> usize {
        self.axes.len()
    }

    pub fn m(&self) -> usize {
        self.axes[0].len()
    }

    /// Largest adjacent gap across all axes.
    pub fn epsilon(&self) -> R {
        let mut eps = R::zero();
        for bidder in &self.axes {
            for axis in bidder {
                for w in axis.windows(2) {
                    let gap = w[1] - w[0];
                    if gap > eps {
                        eps = gap;
                    }
                }
            }
        }
        eps
    }

    pub fn axis(&self, bidder: usize, item: usize) -> &[R] {
        &self.axes[bidder][item]
    }

    /// Number of grid points in bidder i's own value space V_i.
    pub fn own_count(&self, bidder: usize) -> usize {
        self.axes[bidder].iter().map(|a| a.len()).product()
    }

    /// Number of grid points in V_{-i} (product over all other bidders).
    pub fn others_count(&self, bidder: usize) -> usize {
        self.axes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != bidder)
            .flat_map(|(_, axes)| axes.iter().map(|a| a.len()))
            .product()
    }

    /// Decodes a flat own-space index into bidder i's m-vector.
    pub fn own_point(&self, bidder: usize, index: usize) -> Array1<R> {
        let axes = &self.axes[bidder];
        let mut out = Array1::zeros(axes.len());
        let mut rem = index;
        for j in (0..axes.len()).rev() {
            let len = axes[j].len();
            out[j] = axes[j][rem % len];
            rem /= len;
        }
        debug_assert_eq!(rem, 0, "own index out of range");
        out
    }

    /// Decodes a flat others-space index into the concatenated (n-1)*m
    /// vector, bidders in ascending order excluding `bidder`.
    pub fn others_point(&self, bidder: usize, index: usize) -> Array1<R> {
        let order: Vec<usize> = (0..self.n()).filter(|&j| j != bidder).collect();
        let m = self.m();
        let mut out = Array1::zeros(order.len() * m);
        let mut rem = index;
        for slot in (0..order.len()).rev() {
            let axes = &self.axes[order[slot]];
            for j in (0..m).rev() {
                let len = axes[j].len();
                out[slot * m + j] = axes[j][rem % len];
                rem /= len;
            }
        }
        debug_assert_eq!(rem, 0, "others index out of range");
        out
    }

    /// Nearest axis position to x; exact midpoints round down.
    fn axis_nearest(axis: &[R], x: R) -> usize {
        match axis.binary_search_by(|p| p.partial_cmp(&x).expect("finite values")) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == axis.len() => axis.len() - 1,
            Err(i) => {
                let lo = axis[i - 1];
                let hi = axis[i];
                if x - lo <= hi - x {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Flat index of the own-space grid point nearest to v (l-inf); ties
    /// resolve to the lexicographically smallest point.
    pub fn nearest_own(&self, bidder: usize, v: &[R]) -> usize {
        let axes = &self.axes[bidder];
        assert_eq!(v.len(), axes.len(), "value dimension mismatch");
        let mut index = 0;
        for (j, axis) in axes.iter().enumerate() {
            index = index * axis.len() + Self::axis_nearest(axis, v[j]);
        }
        index
    }

    /// Flat index of the others-space grid point nearest to the
    /// concatenated vector v_minus_i; ties resolve lexicographically.
    pub fn nearest_others(&self, bidder: usize, v_minus_i: &[R]) -> usize {
        let order: Vec<usize> = (0..self.n()).filter(|&j| j != bidder).collect();
        let m = self.m();
        assert_eq!(v_minus_i.len(), order.len() * m, "value dimension mismatch");
        let mut index = 0;
        for (slot, &b) in order.iter().enumerate() {
            for j in 0..m {
                let axis = &self.axes[b][j];
                index = index * axis.len() + Self::axis_nearest(axis, v_minus_i[slot * m + j]);
            }
        }
        index
    }

    /// l-inf distance from v to the nearest own-space grid point.
    pub fn own_cover_distance(&self, bidder: usize, v: &[R]) -> R {
        let idx = self.nearest_own(bidder, v);
        let p = self.own_point(bidder, idx);
        v.iter()
            .zip(p.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(R::zero(), |acc, d| if d > acc { d } else { acc })
    }
}
