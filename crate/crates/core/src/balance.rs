//! Load-balancing primitives: scans, searches and even-share partitions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("diagonal {diagonal} outside merge grid of length {len}")]
    DiagonalOutOfRange { diagonal: usize, len: usize },
    #[error("quantization needs at least one tile and one processor")]
    ZeroQuantization,
}

const PAR_SCAN_MIN: usize = 1 << 16;

/// Inclusive scan: `out[i] = x[0] + ... + x[i]`.
///
/// Large inputs use a reduce-then-scan pass over fixed chunks on the rayon
/// pool; the result is identical to the sequential scan.
pub fn prefix_sum(x: &[usize]) -> Vec<usize> {
    if x.len() < PAR_SCAN_MIN {
        return x
            .iter()
            .scan(0usize, |acc, &v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
    }
    let chunk = x.len().div_ceil(rayon::current_num_threads().max(1) * 4);
    let sums: Vec<usize> = x.par_chunks(chunk).map(|c| c.iter().sum()).collect();
    let mut carry = Vec::with_capacity(sums.len());
    let mut acc = 0;
    for s in sums {
        carry.push(acc);
        acc += s;
    }
    let mut out = vec![0; x.len()];
    out.par_chunks_mut(chunk)
        .zip(x.par_chunks(chunk))
        .zip(carry.par_iter())
        .for_each(|((o, c), &base)| {
            let mut acc = base;
            for (dst, &v) in o.iter_mut().zip(c) {
                acc += v;
                *dst = acc;
            }
        });
    out
}

/// Index of the tile owning atom `key` under an inclusive scan: the smallest
/// `i` with `prefix[i] > key`, or `prefix.len()` when there is none.
pub fn lower_bound(prefix: &[usize], key: usize) -> usize {
    prefix.partition_point(|&p| p <= key)
}

/// Contiguous per-worker ranges over `0..total`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub worker_ranges: Vec<Range<usize>>,
}

impl Partition {
    pub fn lengths(&self) -> Vec<usize> {
        self.worker_ranges.iter().map(|r| r.len()).collect()
    }
}

/// Even share within one: the first `total % workers` workers receive
/// `ceil(total / workers)` units and the rest `floor(total / workers)`.
pub fn balanced_partition(total: usize, workers: usize) -> Result<Partition, BalanceError> {
    if workers == 0 {
        return Err(BalanceError::NoWorkers);
    }
    let base = total / workers;
    let extra = total % workers;
    let worker_ranges = (0..workers)
        .map(|w| {
            let begin = w * base + w.min(extra);
            let len = base + usize::from(w < extra);
            begin..begin + len
        })
        .collect();
    Ok(Partition { worker_ranges })
}

/// Every worker gets `ceil(total / workers)` units, clamped at `total`, so
/// trailing workers can come up short or empty.
pub fn naive_ceil_partition(total: usize, workers: usize) -> Result<Partition, BalanceError> {
    if workers == 0 {
        return Err(BalanceError::NoWorkers);
    }
    let per = total.div_ceil(workers);
    let worker_ranges = (0..workers)
        .map(|w| {
            let begin = (w * per).min(total);
            begin..(begin + per).min(total)
        })
        .collect();
    Ok(Partition { worker_ranges })
}

/// A coordinate on the merge grid of row ends versus nonzeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MergePathPoint {
    /// Row ends consumed.
    pub row: usize,
    /// Nonzeros consumed.
    pub nz: usize,
}

/// Locates where `diagonal` crosses the merge path of the row-end list
/// `offsets[1..]` against the nonzero counter `0..nnz`.
///
/// When a row end and a nonzero compare equal the row end is consumed first,
/// so empty rows are closed before the next nonzero is taken.
pub fn merge_path_search(
    diagonal: usize,
    offsets: &[usize],
    nnz: usize,
) -> Result<MergePathPoint, BalanceError> {
    let rows = offsets.len().saturating_sub(1);
    if diagonal > rows + nnz {
        return Err(BalanceError::DiagonalOutOfRange {
            diagonal,
            len: rows + nnz,
        });
    }
    let row_ends = &offsets[1..];
    let mut lo = diagonal.saturating_sub(nnz);
    let mut hi = diagonal.min(rows);
    while lo < hi {
        let pivot = lo + (hi - lo) / 2;
        if row_ends[pivot] < diagonal - pivot {
            lo = pivot + 1;
        } else {
            hi = pivot;
        }
    }
    Ok(MergePathPoint {
        row: lo,
        nz: diagonal - lo,
    })
}

/// Utilization ceiling of `tiles` equal-cost tiles run in whole waves on
/// `procs` processors: `tiles / (ceil(tiles / procs) * procs)`.
pub fn quantization_efficiency(tiles: usize, procs: usize) -> Result<f64, BalanceError> {
    if tiles == 0 || procs == 0 {
        return Err(BalanceError::ZeroQuantization);
    }
    let slots = tiles.div_ceil(procs) * procs;
    Ok(tiles as f64 / slots as f64)
}
