//! Oracle comparisons.
//!
//! Errors are measured elementwise against the magnitude of the sum that
//! produced each entry (`sum |a| |b|`), so cancellation in the reference
//! cannot inflate them.

use crate::formats::{CsrMatrix, DenseMatrix};

/// `max_i |got_i - want_i| / scale_i`. Entries with zero scale must match
/// exactly; any difference there reports infinity.
pub fn max_relative_error(got: &[f64], want: &[f64], scale: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    assert_eq!(got.len(), scale.len());
    got.iter()
        .zip(want)
        .zip(scale)
        .map(|((g, w), s)| {
            let diff = (g - w).abs();
            if diff == 0.0 {
                0.0
            } else if *s == 0.0 || diff.is_nan() {
                f64::INFINITY
            } else {
                diff / s
            }
        })
        .fold(0.0, f64::max)
}

/// `|A| * |B|`, the magnitude scale of a dense product.
pub fn gemm_scale(a: &DenseMatrix, b: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; a.rows * b.cols];
    for i in 0..a.rows {
        let row = &mut out[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.get(i, k).abs();
            for (o, bv) in row.iter_mut().zip(b.row(k)) {
                *o += aik * bv.abs();
            }
        }
    }
    out
}

/// `|A| * |x|`, the magnitude scale of a sparse product.
pub fn spmv_scale(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows)
        .map(|r| {
            a.row_range(r)
                .map(|i| (a.values[i] * x[a.indices[i]]).abs())
                .sum()
        })
        .collect()
}

/// Sequential row loop, the oracle for every sparse schedule.
pub fn spmv_reference(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows)
        .map(|r| a.row_range(r).map(|i| a.values[i] * x[a.indices[i]]).sum())
        .collect()
}

/// Dijkstra over non-negative edge weights; unreachable vertices are `+inf`.
pub fn sssp_reference(adj: &CsrMatrix, source: usize) -> Vec<f64> {
    #[derive(PartialEq)]
    struct Entry(f64, usize);
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
        }
    }
    let mut dist = vec![f64::INFINITY; adj.rows];
    dist[source] = 0.0;
    let mut heap = std::collections::BinaryHeap::from([Entry(0.0, source)]);
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for e in adj.row_range(v) {
            let nd = d + adj.values[e];
            let nb = adj.indices[e];
            if nd < dist[nb] {
                dist[nb] = nd;
                heap.push(Entry(nd, nb));
            }
        }
    }
    dist
}
