//! Small dense helpers shared by every evaluator.
//!
//! Evaluators that must agree bit-for-bit (lazy evaluation and the tree)
//! both go through [`dot`], which sums strictly left to right.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Left-to-right dot product.
#[inline]
pub fn dot(row: ArrayView1<f64>, x: &[f64]) -> f64 {
    debug_assert_eq!(row.len(), x.len());
    let mut acc = 0.0;
    for (w, v) in row.iter().zip(x) {
        acc += w * v;
    }
    acc
}

/// `map · x` using [`dot`] for each row.
pub fn apply(map: ArrayView2<f64>, x: &[f64]) -> Vec<f64> {
    map.rows().into_iter().map(|r| dot(r, x)).collect()
}

/// `[x; 1]`
pub fn homogeneous(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

/// Builds `[[W, b], [0 … 0, 1]]`.
pub fn augment(weights: ArrayView2<f64>, bias: ArrayView1<f64>) -> Array2<f64> {
    let (m, n) = weights.dim();
    let mut out = Array2::zeros((m + 1, n + 1));
    out.slice_mut(ndarray::s![..m, ..n]).assign(&weights);
    out.slice_mut(ndarray::s![..m, n]).assign(&bias);
    out[[m, n]] = 1.0;
    out
}

pub fn augmented_identity(n: usize) -> Array2<f64> {
    Array2::eye(n + 1)
}

/// True when the last row is exactly `[0 … 0 1]`.
pub fn has_homogeneous_row(map: ArrayView2<f64>) -> bool {
    let (m, n) = map.dim();
    if m == 0 || n == 0 {
        return false;
    }
    let last = map.row(m - 1);
    last.iter().take(n - 1).all(|&v| v == 0.0) && last[n - 1] == 1.0
}

/// Largest `|a - b| / (1 + |b|)` over matching entries.
pub fn max_relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch in deviation check");
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs() / (1.0 + y.abs());
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

pub fn to_array(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}
