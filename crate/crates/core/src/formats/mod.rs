//! Sparse matrix containers and their tile-set views.
//!
//! Matrices are stored in coordinate (COO) or compressed sparse row (CSR)
//! form with `f64` values. A [`CsrMatrix`] is exposed to the schedules as a
//! tile set in which every row is a tile and every nonzero is an atom.
//! Dense operands use the row-major [`DenseMatrix`].

mod dense;
mod mtx;
mod synth;
mod tileset;

pub use dense::DenseMatrix;
pub use mtx::{parse_matrix_market, write_matrix_market};
pub use synth::{synth_matrix, Distribution, SynthSpec};
pub use tileset::{csr_tile_set, CountsTileSet, CsrTileSet, TileSetView};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("entry ({row}, {col}) outside a {rows}x{cols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("duplicate entry at ({row}, {col})")]
    Duplicate { row: usize, col: usize },
    #[error("invalid CSR structure: {0}")]
    InvalidCsr(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSynth(String),
    #[error("invalid dense matrix: {0}")]
    InvalidDense(String),
}

/// A list of `(row, col, value)` triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    /// Builds a COO matrix, checking that every entry lies inside the shape.
    pub fn new(
        rows: usize,
        cols: usize,
        entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self, FormatError> {
        for &(row, col, _) in &entries {
            if row >= rows || col >= cols {
                return Err(FormatError::OutOfBounds {
                    row,
                    col,
                    rows,
                    cols,
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Compressed sparse row matrix.
///
/// `offsets[r]..offsets[r + 1]` is the slice of `indices`/`values` holding
/// row `r`, with column indices strictly increasing inside a row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles a CSR matrix from raw arrays, validating every structural
    /// invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, FormatError> {
        let m = Self {
            rows,
            cols,
            offsets,
            indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_range(&self, row: usize) -> std::ops::Range<usize> {
        self.offsets[row]..self.offsets[row + 1]
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |msg: String| Err(FormatError::InvalidCsr(msg));
        if self.offsets.len() != self.rows + 1 {
            return bad(format!(
                "offsets has length {}, expected {}",
                self.offsets.len(),
                self.rows + 1
            ));
        }
        if self.offsets[0] != 0 {
            return bad("offsets[0] must be 0".into());
        }
        if self.indices.len() != self.values.len() {
            return bad("indices and values differ in length".into());
        }
        if self.offsets[self.rows] != self.indices.len() {
            return bad(format!(
                "offsets[rows] = {} but nnz = {}",
                self.offsets[self.rows],
                self.indices.len()
            ));
        }
        for r in 0..self.rows {
            if self.offsets[r] > self.offsets[r + 1] {
                return bad(format!("offsets decrease at row {r}"));
            }
            let cols = &self.indices[self.row_range(r)];
            for (i, &c) in cols.iter().enumerate() {
                if c >= self.cols {
                    return bad(format!("column {c} out of range in row {r}"));
                }
                if i > 0 && cols[i - 1] >= c {
                    return bad(format!("columns not strictly increasing in row {r}"));
                }
            }
        }
        Ok(())
    }

    pub fn to_coo(&self) -> CooMatrix {
        let mut entries = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for k in self.row_range(r) {
                entries.push((r, self.indices[k], self.values[k]));
            }
        }
        CooMatrix {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for k in self.row_range(r) {
                d[r * self.cols + self.indices[k]] = self.values[k];
            }
        }
        d
    }

    /// JSON debug form `{rows, cols, offsets, indices, values}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("CSR serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let m: Self = serde_json::from_str(text)
            .map_err(|e| FormatError::InvalidCsr(format!("bad JSON: {e}")))?;
        m.validate()?;
        Ok(m)
    }
}

/// Converts COO to CSR. Entries are sorted by `(row, col)`; duplicates are
/// rejected rather than summed.
pub fn coo_to_csr(m: &CooMatrix) -> Result<CsrMatrix, FormatError> {
    let mut counts = vec![0usize; m.rows + 1];
    for &(row, col, _) in &m.entries {
        if row >= m.rows || col >= m.cols {
            return Err(FormatError::OutOfBounds {
                row,
                col,
                rows: m.rows,
                cols: m.cols,
            });
        }
        counts[row + 1] += 1;
    }
    for r in 0..m.rows {
        counts[r + 1] += counts[r];
    }
    let offsets = counts;

    let mut order: Vec<usize> = (0..m.entries.len()).collect();
    order.sort_unstable_by_key(|&i| (m.entries[i].0, m.entries[i].1));
    let mut indices = Vec::with_capacity(order.len());
    let mut values = Vec::with_capacity(order.len());
    for (pos, &i) in order.iter().enumerate() {
        let (row, col, v) = m.entries[i];
        if pos > 0 {
            let (prow, pcol, _) = m.entries[order[pos - 1]];
            if prow == row && pcol == col {
                return Err(FormatError::Duplicate { row, col });
            }
        }
        indices.push(col);
        values.push(v);
    }
    Ok(CsrMatrix {
        rows: m.rows,
        cols: m.cols,
        offsets,
        indices,
        values,
    })
}
