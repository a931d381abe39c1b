//! Load-balancing schedules over a [`TileSetView`].
//!
//! A schedule maps `(tile, atom)` work onto `num_workers` workers. The
//! result is a [`ScheduleAssignment`]: per worker, a list of [`TileSpan`]s
//! grouped by lane width. Tile-mapped schedules hand out whole tiles;
//! work-oriented schedules (nonzero split, merge path) may cut a tile
//! between workers, in which case the worker holding the tile's first atom
//! writes the tile and every other piece is a carry folded in afterwards.

use crate::balance::{balanced_partition, lower_bound, merge_path_search, MergePathPoint};
use crate::formats::TileSetView;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("grid needs num_workers >= 1 and group_size >= 1, got {num_workers}x{group_size}")]
    InvalidGrid {
        num_workers: usize,
        group_size: usize,
    },
    #[error("invalid binning parameters: {0}")]
    InvalidBinning(String),
    #[error("unknown schedule '{0}'")]
    UnknownSchedule(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleId {
    ThreadMapped,
    GroupMapped,
    NonzeroSplit,
    MergePath,
    BinningThree,
    BinningLrb,
}

impl ScheduleId {
    pub const ALL: [ScheduleId; 6] = [
        ScheduleId::ThreadMapped,
        ScheduleId::GroupMapped,
        ScheduleId::NonzeroSplit,
        ScheduleId::MergePath,
        ScheduleId::BinningThree,
        ScheduleId::BinningLrb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleId::ThreadMapped => "thread_mapped",
            ScheduleId::GroupMapped => "group_mapped",
            ScheduleId::NonzeroSplit => "nonzero_split",
            ScheduleId::MergePath => "merge_path",
            ScheduleId::BinningThree => "binning_three",
            ScheduleId::BinningLrb => "binning_lrb",
        }
    }

    /// Schedules that may split a tile across workers.
    pub fn splits_tiles(self) -> bool {
        matches!(self, ScheduleId::NonzeroSplit | ScheduleId::MergePath)
    }
}

impl fmt::Display for ScheduleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleId {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScheduleId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| ScheduleError::UnknownSchedule(s.to_string()))
    }
}

/// Workers and lanes per worker. Flat schedules ignore `group_size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    pub num_workers: usize,
    pub group_size: usize,
}

impl GridConfig {
    pub fn flat(num_workers: usize) -> Self {
        Self {
            num_workers,
            group_size: 1,
        }
    }

    pub fn grouped(num_workers: usize, group_size: usize) -> Self {
        Self {
            num_workers,
            group_size,
        }
    }

    fn check(&self) -> Result<(), ScheduleError> {
        if self.num_workers == 0 || self.group_size == 0 {
            return Err(ScheduleError::InvalidGrid {
                num_workers: self.num_workers,
                group_size: self.group_size,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    /// The whole tile, written directly.
    Whole,
    /// Leading piece of a split tile; this worker writes the tile.
    Head,
    /// Non-leading piece of a split tile, folded into the head by fix-up.
    Carry,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpan {
    pub tile: usize,
    pub atoms: Range<usize>,
    pub kind: SpanKind,
}

impl TileSpan {
    fn classify<T: TileSetView + ?Sized>(ts: &T, tile: usize, atoms: Range<usize>) -> Self {
        let full = ts.tile_atom_range(tile);
        let kind = if atoms == full {
            SpanKind::Whole
        } else if atoms.start == full.start {
            SpanKind::Head
        } else {
            SpanKind::Carry
        };
        Self { tile, atoms, kind }
    }

    pub fn writes_tile(&self) -> bool {
        self.kind != SpanKind::Carry
    }
}

/// Spans processed by a group of `lanes` cooperating lanes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneGroup {
    pub lanes: usize,
    pub spans: Vec<TileSpan>,
}

impl LaneGroup {
    /// Splits the spans into pools of `lanes` tiles each; within a pool the
    /// lanes stride over the pool's concatenated atoms.
    pub fn pools(&self) -> impl Iterator<Item = LanePool<'_>> {
        self.spans.chunks(self.lanes.max(1)).map(|spans| {
            let counts: Vec<usize> = spans.iter().map(|s| s.atoms.len()).collect();
            LanePool {
                spans,
                prefix: crate::balance::prefix_sum(&counts),
                lanes: self.lanes.max(1),
            }
        })
    }
}

/// A chunk of tiles whose atoms are enumerated through an inclusive prefix
/// sum, with tile lookup by [`lower_bound`].
#[derive(Debug)]
pub struct LanePool<'a> {
    pub spans: &'a [TileSpan],
    pub prefix: Vec<usize>,
    pub lanes: usize,
}

impl LanePool<'_> {
    pub fn total(&self) -> usize {
        self.prefix.last().copied().unwrap_or(0)
    }

    /// Resolves a pool-local atom to `(index into spans, global atom)`.
    pub fn locate(&self, k: usize) -> (usize, usize) {
        let i = lower_bound(&self.prefix, k);
        let before = if i == 0 { 0 } else { self.prefix[i - 1] };
        (i, self.spans[i].atoms.start + (k - before))
    }

    /// Pool-local atoms `lane, lane + lanes, ...` handled by one lane.
    pub fn lane_atoms(&self, lane: usize) -> impl Iterator<Item = usize> {
        (lane..self.total()).step_by(self.lanes)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerAssignment {
    pub groups: Vec<LaneGroup>,
    /// Work measured in the schedule's own unit (atoms, or rows + atoms for
    /// merge path).
    pub work_units: usize,
    /// Merge-path start and end coordinates, when applicable.
    pub path: Option<(MergePathPoint, MergePathPoint)>,
}

impl WorkerAssignment {
    pub fn spans(&self) -> impl Iterator<Item = &TileSpan> {
        self.groups.iter().flat_map(|g| g.spans.iter())
    }

    pub fn atom_count(&self) -> usize {
        self.spans().map(|s| s.atoms.len()).sum()
    }

    pub fn tiles_owned(&self) -> usize {
        self.spans().filter(|s| s.writes_tile()).count()
    }

    pub fn carries(&self) -> impl Iterator<Item = &TileSpan> {
        self.spans().filter(|s| s.kind == SpanKind::Carry)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleAssignment {
    pub schedule: ScheduleId,
    pub workers: Vec<WorkerAssignment>,
}

impl ScheduleAssignment {
    /// Calls `f(worker, tile, atom)` for every assigned pair, walking lane
    /// pools lane by lane the way the executor does.
    pub fn visit_pairs(&self, mut f: impl FnMut(usize, usize, usize)) {
        for (w, worker) in self.workers.iter().enumerate() {
            for group in &worker.groups {
                for pool in group.pools() {
                    for lane in 0..pool.lanes {
                        for k in pool.lane_atoms(lane) {
                            let (i, atom) = pool.locate(k);
                            f(w, pool.spans[i].tile, atom);
                        }
                    }
                }
            }
        }
    }

    pub fn total_atoms(&self) -> usize {
        self.workers.iter().map(|w| w.atom_count()).sum()
    }
}

fn flat_assignment(schedule: ScheduleId, per_worker: Vec<Vec<TileSpan>>) -> ScheduleAssignment {
    let workers = per_worker
        .into_iter()
        .map(|spans| {
            let work_units = spans.iter().map(|s| s.atoms.len()).sum();
            WorkerAssignment {
                groups: vec![LaneGroup { lanes: 1, spans }],
                work_units,
                path: None,
            }
        })
        .collect();
    ScheduleAssignment { schedule, workers }
}

/// Grid-stride tile ownership: worker `w` takes tiles `w, w + W, w + 2W, ...`.
pub fn thread_mapped<T: TileSetView + ?Sized>(ts: &T, grid: GridConfig) -> ScheduleAssignment {
    let w_count = grid.num_workers.max(1);
    let per_worker = (0..w_count)
        .map(|w| {
            (w..ts.num_tiles())
                .step_by(w_count)
                .map(|t| TileSpan {
                    tile: t,
                    atoms: ts.tile_atom_range(t),
                    kind: SpanKind::Whole,
                })
                .collect()
        })
        .collect();
    flat_assignment(ScheduleId::ThreadMapped, per_worker)
}

/// Contiguous blocks of `ceil(tiles / workers)` tiles per group, processed
/// by `group_size` lanes through a per-pool prefix sum.
pub fn group_mapped<T: TileSetView + ?Sized>(ts: &T, grid: GridConfig) -> ScheduleAssignment {
    let groups = grid.num_workers.max(1);
    let lanes = grid.group_size.max(1);
    let tiles = ts.num_tiles();
    let block = tiles.div_ceil(groups);
    let workers = (0..groups)
        .map(|g| {
            let begin = (g * block).min(tiles);
            let end = (begin + block).min(tiles);
            let spans: Vec<TileSpan> = (begin..end)
                .map(|t| TileSpan {
                    tile: t,
                    atoms: ts.tile_atom_range(t),
                    kind: SpanKind::Whole,
                })
                .collect();
            let work_units = spans.iter().map(|s| s.atoms.len()).sum();
            WorkerAssignment {
                groups: vec![LaneGroup { lanes, spans }],
                work_units,
                path: None,
            }
        })
        .collect();
    ScheduleAssignment {
        schedule: ScheduleId::GroupMapped,
        workers,
    }
}

/// Even share of atoms per worker; tiles cut at worker boundaries.
pub fn nonzero_split<T: TileSetView + ?Sized>(ts: &T, grid: GridConfig) -> ScheduleAssignment {
    let offsets = ts.atom_offsets();
    let inclusive = &offsets[1..];
    let part = balanced_partition(ts.num_atoms(), grid.num_workers.max(1))
        .expect("worker count checked");
    let per_worker = part
        .worker_ranges
        .iter()
        .map(|range| {
            let mut spans = Vec::new();
            if range.is_empty() {
                return spans;
            }
            let mut tile = lower_bound(inclusive, range.start);
            while tile < ts.num_tiles() && offsets[tile] < range.end {
                let atoms = offsets[tile].max(range.start)..offsets[tile + 1].min(range.end);
                if !atoms.is_empty() {
                    spans.push(TileSpan::classify(ts, tile, atoms));
                }
                tile += 1;
            }
            spans
        })
        .collect();
    flat_assignment(ScheduleId::NonzeroSplit, per_worker)
}

/// Even share of `rows + atoms` merge-path work per worker.
pub fn merge_path<T: TileSetView + ?Sized>(ts: &T, grid: GridConfig) -> ScheduleAssignment {
    let offsets = ts.atom_offsets();
    let rows = ts.num_tiles();
    let nnz = ts.num_atoms();
    let part = balanced_partition(rows + nnz, grid.num_workers.max(1))
        .expect("worker count checked");
    let workers = part
        .worker_ranges
        .iter()
        .map(|diag| {
            let start = merge_path_search(diag.start, &offsets, nnz).expect("diagonal in range");
            let end = merge_path_search(diag.end, &offsets, nnz).expect("diagonal in range");
            let mut spans = Vec::new();
            // rows whose end this worker consumes
            for t in start.row..end.row {
                let atoms = start.nz.max(offsets[t])..offsets[t + 1];
                if !atoms.is_empty() || offsets[t] == offsets[t + 1] {
                    spans.push(TileSpan::classify(ts, t, atoms));
                }
            }
            // trailing partial row
            if end.row < rows {
                let atoms = start.nz.max(offsets[end.row])..end.nz;
                if !atoms.is_empty() {
                    spans.push(TileSpan::classify(ts, end.row, atoms));
                }
            }
            WorkerAssignment {
                groups: vec![LaneGroup { lanes: 1, spans }],
                work_units: diag.len(),
                path: Some((start, end)),
            }
        })
        .collect();
    ScheduleAssignment {
        schedule: ScheduleId::MergePath,
        workers,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// Bins `thread` (0), `warp` (1) and `block` (2).
    ThreeBin { block_size: usize, warp_size: usize },
    /// Logarithmic radix binning: bin `floor(log2(atoms))`, zero-atom tiles in
    /// bin 0, overflow clamped into the last bin.
    Lrb { num_bins: usize },
}

impl BinMode {
    pub const DEFAULT_THREE: BinMode = BinMode::ThreeBin {
        block_size: 256,
        warp_size: 32,
    };
    pub const DEFAULT_LRB: BinMode = BinMode::Lrb { num_bins: 64 };

    pub fn num_bins(&self) -> usize {
        match *self {
            BinMode::ThreeBin { .. } => 3,
            BinMode::Lrb { num_bins } => num_bins,
        }
    }

    /// Lane width used to execute a bin.
    pub fn lanes_for_bin(&self, bin: usize) -> usize {
        const LRB_MAX_LANES: usize = 1024;
        match *self {
            BinMode::ThreeBin {
                block_size,
                warp_size,
            } => [1, warp_size, block_size][bin],
            BinMode::Lrb { .. } => 1usize
                .checked_shl(bin as u32)
                .unwrap_or(LRB_MAX_LANES)
                .min(LRB_MAX_LANES),
        }
    }

    fn check(&self) -> Result<(), ScheduleError> {
        match *self {
            BinMode::ThreeBin {
                block_size,
                warp_size,
            } if block_size == 0 || warp_size == 0 || warp_size > block_size => {
                Err(ScheduleError::InvalidBinning(format!(
                    "need 0 < warp_size <= block_size, got {warp_size} and {block_size}"
                )))
            }
            BinMode::Lrb { num_bins } if num_bins == 0 || num_bins > 64 => Err(
                ScheduleError::InvalidBinning(format!("num_bins must be in 1..=64, got {num_bins}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bins {
    pub mode: BinMode,
    /// Bin label of every tile.
    pub bin_ids: Vec<usize>,
    /// Tiles of each bin, ascending.
    pub members: Vec<Vec<usize>>,
}

pub fn bin_tiles<T: TileSetView + ?Sized>(ts: &T, mode: BinMode) -> Result<Bins, ScheduleError> {
    mode.check()?;
    let bin_ids: Vec<usize> = (0..ts.num_tiles())
        .map(|t| {
            let atoms = ts.atoms_per_tile(t);
            match mode {
                BinMode::ThreeBin {
                    block_size,
                    warp_size,
                } => {
                    if atoms >= block_size {
                        2
                    } else if atoms >= warp_size {
                        1
                    } else {
                        0
                    }
                }
                BinMode::Lrb { num_bins } => {
                    let b = if atoms == 0 { 0 } else { atoms.ilog2() as usize };
                    b.min(num_bins - 1)
                }
            }
        })
        .collect();
    let mut members = vec![Vec::new(); mode.num_bins()];
    for (t, &b) in bin_ids.iter().enumerate() {
        members[b].push(t);
    }
    Ok(Bins {
        mode,
        bin_ids,
        members,
    })
}

/// Each bin's tiles are split evenly by count across workers and executed
/// with the bin's lane width.
pub fn binned<T: TileSetView + ?Sized>(
    ts: &T,
    grid: GridConfig,
    mode: BinMode,
) -> Result<ScheduleAssignment, ScheduleError> {
    grid.check()?;
    let bins = bin_tiles(ts, mode)?;
    let mut workers = vec![WorkerAssignment::default(); grid.num_workers];
    for (bin, members) in bins.members.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let lanes = mode.lanes_for_bin(bin);
        let part = balanced_partition(members.len(), grid.num_workers).expect("checked");
        for (worker, range) in workers.iter_mut().zip(part.worker_ranges) {
            if range.is_empty() {
                continue;
            }
            let spans: Vec<TileSpan> = members[range]
                .iter()
                .map(|&t| TileSpan {
                    tile: t,
                    atoms: ts.tile_atom_range(t),
                    kind: SpanKind::Whole,
                })
                .collect();
            worker.work_units += spans.iter().map(|s| s.atoms.len()).sum::<usize>();
            worker.groups.push(LaneGroup { lanes, spans });
        }
    }
    let schedule = match mode {
        BinMode::ThreeBin { .. } => ScheduleId::BinningThree,
        BinMode::Lrb { .. } => ScheduleId::BinningLrb,
    };
    Ok(ScheduleAssignment { schedule, workers })
}

/// Builds the named schedule; binning schedules use their default modes.
pub fn build_schedule<T: TileSetView + ?Sized>(
    id: ScheduleId,
    ts: &T,
    grid: GridConfig,
) -> Result<ScheduleAssignment, ScheduleError> {
    grid.check()?;
    Ok(match id {
        ScheduleId::ThreadMapped => thread_mapped(ts, grid),
        ScheduleId::GroupMapped => group_mapped(ts, grid),
        ScheduleId::NonzeroSplit => nonzero_split(ts, grid),
        ScheduleId::MergePath => merge_path(ts, grid),
        ScheduleId::BinningThree => binned(ts, grid, BinMode::DEFAULT_THREE)?,
        ScheduleId::BinningLrb => binned(ts, grid, BinMode::DEFAULT_LRB)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{CountsTileSet, CsrTileSet};
    use proptest::prelude::*;

    fn tiles_of(a: &ScheduleAssignment, w: usize) -> Vec<usize> {
        a.workers[w].spans().map(|s| s.tile).collect()
    }

    /// Independent coverage check: every (tile, atom) pair exactly once, and
    /// every non-empty tile written by exactly one span.
    fn check_coverage(ts: &CountsTileSet, a: &ScheduleAssignment) -> Result<(), String> {
        let mut seen = vec![0u32; ts.num_atoms()];
        let mut bad = None;
        a.visit_pairs(|_, tile, atom| {
            if !ts.tile_atom_range(tile).contains(&atom) {
                bad = Some(format!("atom {atom} not in tile {tile}"));
            }
            seen[atom] += 1;
        });
        if let Some(b) = bad {
            return Err(b);
        }
        if let Some(i) = seen.iter().position(|&c| c != 1) {
            return Err(format!("atom {i} seen {} times", seen[i]));
        }
        let mut writers = vec![0u32; ts.num_tiles()];
        for w in &a.workers {
            for s in w.spans() {
                if s.writes_tile() {
                    writers[s.tile] += 1;
                }
                if s.kind == SpanKind::Carry && !a.schedule.splits_tiles() {
                    return Err("carry from a tile-mapped schedule".into());
                }
            }
        }
        for (t, &w) in writers.iter().enumerate() {
            if ts.atoms_per_tile(t) > 0 && w != 1 {
                return Err(format!("tile {t} written {w} times"));
            }
        }
        Ok(())
    }

    #[test]
    fn thread_mapped_stride() {
        let ts = CountsTileSet::new(&[1; 6]);
        let a = thread_mapped(&ts, GridConfig::flat(4));
        assert_eq!(tiles_of(&a, 0), vec![0, 4]);
        assert_eq!(tiles_of(&a, 1), vec![1, 5]);
        assert_eq!(tiles_of(&a, 2), vec![2]);
        assert_eq!(tiles_of(&a, 3), vec![3]);
        let a = thread_mapped(&CountsTileSet::new(&[2, 3, 4]), GridConfig::flat(3));
        assert!((0..3).all(|w| tiles_of(&a, w) == vec![w]));
    }

    #[test]
    fn group_mapped_pool_lookup() {
        let ts = CountsTileSet::new(&[3, 0, 2, 5]);
        let a = group_mapped(&ts, GridConfig::grouped(1, 4));
        let group = &a.workers[0].groups[0];
        let pools: Vec<_> = group.pools().collect();
        assert_eq!(pools.len(), 1);
        assert_eq!(pools[0].prefix, vec![3, 3, 5, 10]);
        assert_eq!(pools[0].lane_atoms(0).collect::<Vec<_>>(), vec![0, 4, 8]);
        let (i, atom) = pools[0].locate(4);
        assert_eq!((pools[0].spans[i].tile, atom), (2, 4));
    }

    #[test]
    fn group_mapped_one_atom_per_lane() {
        let ts = CountsTileSet::new(&[7]);
        let a = group_mapped(&ts, GridConfig::grouped(1, 7));
        let pool = a.workers[0].groups[0].pools().next().unwrap();
        for lane in 0..7 {
            assert_eq!(pool.lane_atoms(lane).collect::<Vec<_>>(), vec![lane]);
        }
    }

    #[test]
    fn group_mapped_single_lane_is_sequential() {
        let ts = CountsTileSet::new(&[2, 1, 3, 0, 4]);
        let a = group_mapped(&ts, GridConfig::grouped(2, 1));
        assert_eq!(tiles_of(&a, 0), vec![0, 1, 2]);
        assert_eq!(tiles_of(&a, 1), vec![3, 4]);
        let mut order = Vec::new();
        a.visit_pairs(|w, _, atom| order.push((w, atom)));
        let expect: Vec<_> = (0..6).map(|a| (0, a)).chain((6..10).map(|a| (1, a))).collect();
        assert_eq!(order, expect);
    }

    #[test]
    fn nonzero_split_examples() {
        let a = nonzero_split(&CountsTileSet::new(&[2; 5]), GridConfig::flat(5));
        assert!(a.workers.iter().all(|w| w.atom_count() == 2));

        let a = nonzero_split(&CountsTileSet::new(&[4, 4]), GridConfig::flat(4));
        assert_eq!(tiles_of(&a, 0), vec![0]);
        assert_eq!(tiles_of(&a, 1), vec![0]);
        assert_eq!(tiles_of(&a, 2), vec![1]);
        assert_eq!(tiles_of(&a, 3), vec![1]);
        let kinds: Vec<_> = a.workers.iter().flat_map(|w| w.spans().map(|s| s.kind)).collect();
        assert_eq!(
            kinds,
            vec![SpanKind::Head, SpanKind::Carry, SpanKind::Head, SpanKind::Carry]
        );

        let a = nonzero_split(&CountsTileSet::new(&[1]), GridConfig::flat(4));
        assert_eq!(a.workers[0].atom_count(), 1);
        assert!(a.workers[1..].iter().all(|w| w.atom_count() == 0));
    }

    #[test]
    fn merge_path_worked_example() {
        let offsets = [0, 1, 3, 3, 6];
        let ts = CsrTileSet::from_offsets(&offsets);
        let a = merge_path(&ts, GridConfig::flat(5));
        // diagonals 0,2,4,6,8,10 through the two-pointer merge
        let starts: Vec<_> = a
            .workers
            .iter()
            .map(|w| {
                let p = w.path.unwrap().0;
                (p.row, p.nz)
            })
            .collect();
        assert_eq!(starts, vec![(0, 0), (1, 1), (1, 3), (3, 3), (3, 5)]);
        assert!(a.workers.iter().all(|w| w.work_units == 2));
        // worker 0 consumes nonzero 0 and the end of row 0
        assert_eq!(
            a.workers[0].spans().cloned().collect::<Vec<_>>(),
            vec![TileSpan { tile: 0, atoms: 0..1, kind: SpanKind::Whole }]
        );
    }

    #[test]
    fn merge_path_single_row() {
        let offsets = [0, 17];
        let ts = CsrTileSet::from_offsets(&offsets);
        let a = merge_path(&ts, GridConfig::flat(4));
        // 18 path items (17 nonzeros, 1 row end); the last worker takes the row end
        let counts: Vec<_> = a.workers.iter().map(|w| w.atom_count()).collect();
        assert_eq!(counts, vec![5, 5, 4, 3]);
        let carries: usize = a.workers.iter().map(|w| w.carries().count()).sum();
        assert_eq!(carries, 3);
    }

    #[test]
    fn merge_path_empty_matrix() {
        let offsets = [0];
        let ts = CsrTileSet::from_offsets(&offsets);
        let a = merge_path(&ts, GridConfig::flat(3));
        assert!(a.workers.iter().all(|w| w.spans().count() == 0));
    }

    #[test]
    fn three_bin_thresholds() {
        let ts = CountsTileSet::new(&[5, 40, 300]);
        let bins = bin_tiles(&ts, BinMode::DEFAULT_THREE).unwrap();
        assert_eq!(bins.bin_ids, vec![0, 1, 2]);
    }

    #[test]
    fn lrb_label() {
        let bins = bin_tiles(&CountsTileSet::new(&[5]), BinMode::DEFAULT_LRB).unwrap();
        assert_eq!(bins.bin_ids, vec![2]);
        let bins = bin_tiles(&CountsTileSet::new(&[0, 1, 1000]), BinMode::Lrb { num_bins: 4 }).unwrap();
        assert_eq!(bins.bin_ids, vec![0, 0, 3]);
        assert!(bin_tiles(&CountsTileSet::new(&[1]), BinMode::Lrb { num_bins: 65 }).is_err());
    }

    #[test]
    fn schedule_names_round_trip() {
        for id in ScheduleId::ALL {
            assert_eq!(id.as_str().parse::<ScheduleId>().unwrap(), id);
        }
        assert!("round_robin".parse::<ScheduleId>().is_err());
    }

    #[test]
    fn zero_workers_rejected() {
        let ts = CountsTileSet::new(&[1]);
        assert!(build_schedule(ScheduleId::MergePath, &ts, GridConfig::flat(0)).is_err());
    }

    fn counts_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop_oneof![
            prop::collection::vec(0usize..8, 0..80),
            prop::collection::vec(0usize..400, 1..4),
            prop::collection::vec(prop_oneof![Just(0usize), 1usize..3, 50usize..300], 0..40),
        ]
    }

    proptest! {
        #[test]
        fn every_schedule_covers_exactly_once(
            counts in counts_strategy(),
            workers in 1usize..20,
            group in 1usize..9,
        ) {
            let ts = CountsTileSet::new(&counts);
            for id in ScheduleId::ALL {
                let a = build_schedule(id, &ts, GridConfig::grouped(workers, group)).unwrap();
                prop_assert_eq!(a.workers.len(), workers);
                if let Err(e) = check_coverage(&ts, &a) {
                    return Err(TestCaseError::fail(format!("{id}: {e}")));
                }
            }
        }

        #[test]
        fn work_oriented_even_share(counts in counts_strategy(), workers in 1usize..20) {
            let ts = CountsTileSet::new(&counts);
            let ns = nonzero_split(&ts, GridConfig::flat(workers));
            let atoms: Vec<_> = ns.workers.iter().map(|w| w.atom_count()).collect();
            prop_assert!(atoms.iter().max().unwrap() - atoms.iter().min().unwrap() <= 1);

            let mp = merge_path(&ts, GridConfig::flat(workers));
            let units: Vec<_> = mp.workers.iter().map(|w| {
                let (s, e) = w.path.unwrap();
                (e.row - s.row) + (e.nz - s.nz)
            }).collect();
            prop_assert!(units.iter().max().unwrap() - units.iter().min().unwrap() <= 1);
            prop_assert_eq!(units.iter().sum::<usize>(), ts.num_tiles() + ts.num_atoms());
        }

        #[test]
        fn lrb_bounds(counts in prop::collection::vec(0usize..100_000, 1..50)) {
            let ts = CountsTileSet::new(&counts);
            let bins = bin_tiles(&ts, BinMode::DEFAULT_LRB).unwrap();
            prop_assert_eq!(bins.members.iter().map(Vec::len).sum::<usize>(), counts.len());
            for (t, &c) in counts.iter().enumerate() {
                let b = bins.bin_ids[t];
                prop_assert!(bins.members[b].contains(&t));
                if c > 0 {
                    prop_assert!(1usize << b <= c && c < 1usize << (b + 1));
                }
            }
        }
    }
}
