use super::CsrMatrix;
use crate::balance::prefix_sum;
use std::borrow::Cow;
use std::ops::Range;

/// A problem described as tiles of atoms.
///
/// Atoms are numbered `0..num_atoms()` and every tile owns a contiguous run
/// of them; tile ranges appear in tile order and together cover all atoms.
/// Schedules see only this view, never the container behind it.
pub trait TileSetView: Sync {
    fn num_tiles(&self) -> usize;
    fn num_atoms(&self) -> usize;
    fn tile_atom_range(&self, tile: usize) -> Range<usize>;

    fn atoms_per_tile(&self, tile: usize) -> usize {
        self.tile_atom_range(tile).len()
    }

    /// Exclusive atom offsets of length `num_tiles() + 1`. Containers that
    /// already store offsets (CSR) hand them out directly; the default
    /// rebuilds them with a prefix sum over `atoms_per_tile`.
    fn atom_offsets(&self) -> Cow<'_, [usize]> {
        let counts: Vec<usize> = (0..self.num_tiles())
            .map(|t| self.atoms_per_tile(t))
            .collect();
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0);
        offsets.extend(prefix_sum(&counts));
        Cow::Owned(offsets)
    }
}

/// CSR offsets viewed as a tile set: rows are tiles, nonzeros are atoms.
#[derive(Clone, Copy, Debug)]
pub struct CsrTileSet<'a> {
    offsets: &'a [usize],
}

impl<'a> CsrTileSet<'a> {
    /// `offsets` must be non-empty, start at zero and be non-decreasing.
    pub fn from_offsets(offsets: &'a [usize]) -> Self {
        debug_assert!(!offsets.is_empty() && offsets[0] == 0);
        debug_assert!(offsets.windows(2).all(|w| w[0] <= w[1]));
        Self { offsets }
    }
}

impl TileSetView for CsrTileSet<'_> {
    fn num_tiles(&self) -> usize {
        self.offsets.len() - 1
    }

    fn num_atoms(&self) -> usize {
        self.offsets[self.offsets.len() - 1]
    }

    fn tile_atom_range(&self, tile: usize) -> Range<usize> {
        self.offsets[tile]..self.offsets[tile + 1]
    }

    fn atom_offsets(&self) -> Cow<'_, [usize]> {
        Cow::Borrowed(self.offsets)
    }
}

pub fn csr_tile_set(m: &CsrMatrix) -> CsrTileSet<'_> {
    CsrTileSet::from_offsets(&m.offsets)
}

/// A tile set built from per-tile atom counts.
#[derive(Clone, Debug, PartialEq)]
pub struct CountsTileSet {
    offsets: Vec<usize>,
}

impl CountsTileSet {
    pub fn new(counts: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0);
        offsets.extend(prefix_sum(counts));
        Self { offsets }
    }
}

impl TileSetView for CountsTileSet {
    fn num_tiles(&self) -> usize {
        self.offsets.len() - 1
    }

    fn num_atoms(&self) -> usize {
        self.offsets[self.offsets.len() - 1]
    }

    fn tile_atom_range(&self, tile: usize) -> Range<usize> {
        self.offsets[tile]..self.offsets[tile + 1]
    }

    fn atom_offsets(&self) -> Cow<'_, [usize]> {
        Cow::Borrowed(&self.offsets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{coo_to_csr, synth_matrix, CooMatrix, SynthSpec};
    use proptest::prelude::*;

    fn atoms_per_tile(ts: &dyn TileSetView) -> Vec<usize> {
        (0..ts.num_tiles()).map(|t| ts.atoms_per_tile(t)).collect()
    }

    #[test]
    fn csr_offsets_to_counts() {
        let offsets = [0, 2, 2, 5];
        let ts = CsrTileSet::from_offsets(&offsets);
        assert_eq!(atoms_per_tile(&ts), vec![2, 0, 3]);
        assert_eq!(ts.num_atoms(), 5);
        assert_eq!(ts.tile_atom_range(2), 2..5);
    }

    #[test]
    fn identity_one_atom_per_tile() {
        let m = CsrMatrix::identity(3);
        assert_eq!(atoms_per_tile(&csr_tile_set(&m)), vec![1, 1, 1]);
    }

    #[test]
    fn power_law_atoms_sum_to_nnz() {
        let m = synth_matrix(&SynthSpec::power_law(2000, 500, 2.0, 128), 3).unwrap();
        let ts = csr_tile_set(&m);
        assert_eq!(atoms_per_tile(&ts).iter().sum::<usize>(), m.nnz());
    }

    #[test]
    fn default_offsets_match_counts_view() {
        struct Rows(Vec<usize>);
        impl TileSetView for Rows {
            fn num_tiles(&self) -> usize {
                self.0.len()
            }
            fn num_atoms(&self) -> usize {
                self.0.iter().sum()
            }
            fn tile_atom_range(&self, tile: usize) -> Range<usize> {
                let start: usize = self.0[..tile].iter().sum();
                start..start + self.0[tile]
            }
        }
        let rows = Rows(vec![3, 0, 2, 5]);
        let counts = CountsTileSet::new(&rows.0);
        assert_eq!(rows.atom_offsets().as_ref(), &[0, 3, 3, 5, 10]);
        assert_eq!(rows.atom_offsets(), counts.atom_offsets());
    }

    proptest! {
        #[test]
        fn tile_ranges_cover_atoms_in_order(
            rows in 0usize..30,
            raw in prop::collection::vec((0usize..30, 0usize..30), 0..120),
        ) {
            let mut cells: Vec<(usize, usize)> = raw.into_iter()
                .filter(|&(r, _)| r < rows)
                .collect();
            cells.sort_unstable();
            cells.dedup();
            let coo = CooMatrix::new(rows, 30, cells.into_iter().map(|(r, c)| (r, c, 1.0)).collect()).unwrap();
            let csr = coo_to_csr(&coo).unwrap();
            let ts = csr_tile_set(&csr);
            let mut next = 0;
            for t in 0..ts.num_tiles() {
                let r = ts.tile_atom_range(t);
                prop_assert_eq!(r.start, next);
                next = r.end;
            }
            prop_assert_eq!(next, csr.nnz());
        }
    }
}
