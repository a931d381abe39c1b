//! Tile decompositions of a blocked GEMM.
//!
//! The output is cut into `blk_m x blk_n` tiles and the k dimension into
//! `blk_k` slabs. One MAC-loop iteration is one tile times one slab. All
//! iterations are laid out in a single m→n→k linearization: tiles in
//! row-major order over the tile grid (`tile = tm * tiles_n + tn`), and
//! within a tile the k iterations in ascending order. A [`GemmPlan`] hands
//! every CTA one contiguous range of that linearization.

mod exec;

pub use exec::{execute_plan, mac_loop, sequential_gemm};

use crate::balance::{balanced_partition, naive_ceil_partition};
use crate::engine::EngineError;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamKError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("tile {tile} out of range for {tiles} tiles")]
    TileOutOfRange { tile: usize, tiles: usize },
    #[error("iteration range {begin}..{end} outside 0..{iters_per_tile}")]
    IterRangeOutOfBounds {
        begin: usize,
        end: usize,
        iters_per_tile: usize,
    },
    #[error("invalid plan parameter: {0}")]
    InvalidParam(String),
    #[error("unknown plan kind '{0}'")]
    UnknownKind(String),
    #[error("malformed plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Problem size and blocking factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub blk_m: usize,
    pub blk_n: usize,
    pub blk_k: usize,
}

impl GemmShape {
    pub fn new(dims: [usize; 3], blk: [usize; 3]) -> Result<Self, StreamKError> {
        let [m, n, k] = dims;
        let [blk_m, blk_n, blk_k] = blk;
        if dims.contains(&0) || blk.contains(&0) {
            return Err(StreamKError::InvalidShape(format!(
                "all of m, n, k and blocking must be >= 1, got {m}x{n}x{k} / {blk_m}x{blk_n}x{blk_k}"
            )));
        }
        Ok(Self {
            m,
            n,
            k,
            blk_m,
            blk_n,
            blk_k,
        })
    }

    pub fn tiles_m(&self) -> usize {
        self.m.div_ceil(self.blk_m)
    }

    pub fn tiles_n(&self) -> usize {
        self.n.div_ceil(self.blk_n)
    }

    pub fn tiles(&self) -> usize {
        self.tiles_m() * self.tiles_n()
    }

    pub fn iters_per_tile(&self) -> usize {
        self.k.div_ceil(self.blk_k)
    }

    pub fn total_iters(&self) -> usize {
        self.tiles() * self.iters_per_tile()
    }

    /// `(tm, tn)` coordinates of a linear tile index.
    pub fn tile_coords(&self, tile: usize) -> (usize, usize) {
        (tile / self.tiles_n(), tile % self.tiles_n())
    }
}

/// Parses `AxBxC` into three positive counts.
pub fn parse_triple(s: &str) -> Result<[usize; 3], StreamKError> {
    let bad = || StreamKError::InvalidShape(format!("'{s}' is not of the form AxBxC"));
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

/// Decomposition family and its size parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanKind {
    /// One CTA per output tile.
    DataParallel,
    /// `s` CTAs per output tile, each with a contiguous share of its k loop.
    FixedSplit { s: usize },
    /// `g` CTAs with an even share of all iterations.
    StreamK { g: usize },
    /// Full data-parallel waves plus Stream-K over the leftover tiles on `p` CTAs.
    DpPlusOneTileSk { p: usize },
    /// One wave fewer of data-parallel tiles; Stream-K CTAs get between one
    /// and two tiles' worth of iterations.
    TwoTileSkPlusDp { p: usize },
}

/// String names of the plan kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanKindId {
    DataParallel,
    FixedSplit,
    StreamK,
    DpPlusOneTileSk,
    TwoTileSkPlusDp,
}

impl PlanKindId {
    pub const ALL: [PlanKindId; 5] = [
        PlanKindId::DataParallel,
        PlanKindId::FixedSplit,
        PlanKindId::StreamK,
        PlanKindId::DpPlusOneTileSk,
        PlanKindId::TwoTileSkPlusDp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlanKindId::DataParallel => "data_parallel",
            PlanKindId::FixedSplit => "fixed_split",
            PlanKindId::StreamK => "stream_k",
            PlanKindId::DpPlusOneTileSk => "dp_plus_one_tile_sk",
            PlanKindId::TwoTileSkPlusDp => "two_tile_sk_plus_dp",
        }
    }

    /// Attaches the size parameter: `s` for fixed split, `g` for Stream-K,
    /// `p` for the hybrids. Ignored for data-parallel.
    pub fn with_param(self, n: usize) -> PlanKind {
        match self {
            PlanKindId::DataParallel => PlanKind::DataParallel,
            PlanKindId::FixedSplit => PlanKind::FixedSplit { s: n },
            PlanKindId::StreamK => PlanKind::StreamK { g: n },
            PlanKindId::DpPlusOneTileSk => PlanKind::DpPlusOneTileSk { p: n },
            PlanKindId::TwoTileSkPlusDp => PlanKind::TwoTileSkPlusDp { p: n },
        }
    }
}

impl fmt::Display for PlanKindId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlanKindId {
    type Err = StreamKError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlanKindId::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StreamKError::UnknownKind(s.to_string()))
    }
}

impl PlanKind {
    pub fn id(&self) -> PlanKindId {
        match self {
            PlanKind::DataParallel => PlanKindId::DataParallel,
            PlanKind::FixedSplit { .. } => PlanKindId::FixedSplit,
            PlanKind::StreamK { .. } => PlanKindId::StreamK,
            PlanKind::DpPlusOneTileSk { .. } => PlanKindId::DpPlusOneTileSk,
            PlanKind::TwoTileSkPlusDp { .. } => PlanKindId::TwoTileSkPlusDp,
        }
    }
}

/// How Stream-K divides iterations among CTAs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Partitioning {
    /// Counts differ by at most one.
    #[default]
    Balanced,
    /// `ceil(total / g)` per CTA, trailing CTAs short or empty.
    NaiveCeil,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HybridMode {
    OneTile,
    TwoTile,
}

/// A split tile: the CTA that writes it and the CTAs whose partials it adds,
/// ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileFixup {
    pub tile: usize,
    pub owner: usize,
    pub peers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmPlan {
    pub shape: GemmShape,
    #[serde(flatten)]
    pub kind: PlanKind,
    pub grid: usize,
    pub total_iters: usize,
    /// Half-open `[begin, end)` per CTA.
    pub cta_ranges: Vec<(usize, usize)>,
    /// Tiles touched by more than one CTA, ascending by tile.
    pub fixup: Vec<TileFixup>,
}

impl GemmPlan {
    fn from_ranges(shape: GemmShape, kind: PlanKind, cta_ranges: Vec<(usize, usize)>) -> Self {
        let ipt = shape.iters_per_tile();
        let mut contributors: Vec<Vec<usize>> = vec![Vec::new(); shape.tiles()];
        for (cta, &(b, e)) in cta_ranges.iter().enumerate() {
            if b < e {
                for c in &mut contributors[b / ipt..=(e - 1) / ipt] {
                    c.push(cta);
                }
            }
        }
        let fixup = contributors
            .into_iter()
            .enumerate()
            .filter(|(_, c)| c.len() > 1)
            .map(|(tile, c)| TileFixup {
                tile,
                owner: c[0],
                peers: c[1..].to_vec(),
            })
            .collect();
        Self {
            shape,
            kind,
            grid: cta_ranges.len(),
            total_iters: shape.total_iters(),
            cta_ranges,
            fixup,
        }
    }

    pub fn iters_of(&self, cta: usize) -> usize {
        let (b, e) = self.cta_ranges[cta];
        e - b
    }

    /// Partials exchanged in total: one per peer of every split tile.
    pub fn partials(&self) -> usize {
        self.fixup.iter().map(|f| f.peers.len()).sum()
    }

    /// Checks coverage, grid size and fixup lists; used on plans read from JSON.
    pub fn validate(&self) -> Result<(), StreamKError> {
        let bad = |m: String| Err(StreamKError::InvalidPlan(m));
        if self.total_iters != self.shape.total_iters() {
            return bad(format!(
                "total_iters {} but shape has {}",
                self.total_iters,
                self.shape.total_iters()
            ));
        }
        if self.grid != self.cta_ranges.len() {
            return bad(format!("grid {} but {} ranges", self.grid, self.cta_ranges.len()));
        }
        let mut next = 0;
        for (cta, &(b, e)) in self.cta_ranges.iter().enumerate() {
            if b != next || e < b {
                return bad(format!("CTA {cta} range {b}..{e} does not continue at {next}"));
            }
            next = e;
        }
        if next != self.total_iters {
            return bad(format!("ranges end at {next}, expected {}", self.total_iters));
        }
        let rebuilt = Self::from_ranges(self.shape, self.kind, self.cta_ranges.clone());
        if rebuilt.fixup != self.fixup {
            return bad("fixup lists do not match the ranges".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StreamKError> {
        let plan: Self =
            serde_json::from_str(text).map_err(|e| StreamKError::InvalidPlan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }
}

fn tile_ranges(tiles: std::ops::Range<usize>, ipt: usize) -> impl Iterator<Item = (usize, usize)> {
    tiles.map(move |t| (t * ipt, (t + 1) * ipt))
}

fn split_ranges(
    begin: usize,
    total: usize,
    g: usize,
    rule: Partitioning,
) -> Vec<(usize, usize)> {
    let part = match rule {
        Partitioning::Balanced => balanced_partition(total, g),
        Partitioning::NaiveCeil => naive_ceil_partition(total, g),
    }
    .expect("g >= 1");
    part.worker_ranges
        .into_iter()
        .map(|r| (begin + r.start, begin + r.end))
        .collect()
}

/// Builds a plan with balanced Stream-K partitioning.
pub fn make_plan(shape: GemmShape, kind: PlanKind) -> Result<GemmPlan, StreamKError> {
    make_plan_with(shape, kind, Partitioning::Balanced)
}

pub fn make_plan_with(
    shape: GemmShape,
    kind: PlanKind,
    rule: Partitioning,
) -> Result<GemmPlan, StreamKError> {
    let ipt = shape.iters_per_tile();
    let tiles = shape.tiles();
    let ranges = match kind {
        PlanKind::DataParallel => tile_ranges(0..tiles, ipt).collect(),
        PlanKind::FixedSplit { s } => {
            if s == 0 {
                return Err(StreamKError::InvalidParam("fixed_split needs s >= 1".into()));
            }
            let per = ipt.div_ceil(s);
            (0..tiles * s)
                .map(|cta| {
                    let (x, y) = (cta / s, cta % s);
                    let base = x * ipt;
                    (base + (y * per).min(ipt), base + ((y + 1) * per).min(ipt))
                })
                .collect()
        }
        PlanKind::StreamK { g } => {
            if g == 0 {
                return Err(StreamKError::InvalidParam("stream_k needs g >= 1".into()));
            }
            split_ranges(0, shape.total_iters(), g, rule)
        }
        PlanKind::DpPlusOneTileSk { p } => return make_hybrid_plan(shape, p, HybridMode::OneTile),
        PlanKind::TwoTileSkPlusDp { p } => return make_hybrid_plan(shape, p, HybridMode::TwoTile),
    };
    Ok(GemmPlan::from_ranges(shape, kind, ranges))
}

/// Data-parallel waves combined with a Stream-K region on `p` CTAs.
///
/// The Stream-K region occupies the first tiles of the linearization and its
/// `p` CTAs come first in the grid; data-parallel CTAs follow, one per
/// remaining tile. Degenerate cases fall back to plain Stream-K over all
/// iterations (`w = 0` for one-tile, `w <= 1` for two-tile) or, for one-tile
/// with no leftover tiles, to plain data-parallel.
pub fn make_hybrid_plan(shape: GemmShape, p: usize, mode: HybridMode) -> Result<GemmPlan, StreamKError> {
    if p == 0 {
        return Err(StreamKError::InvalidParam("hybrid plans need p >= 1".into()));
    }
    let kind = match mode {
        HybridMode::OneTile => PlanKind::DpPlusOneTileSk { p },
        HybridMode::TwoTile => PlanKind::TwoTileSkPlusDp { p },
    };
    let t = shape.tiles();
    let ipt = shape.iters_per_tile();
    let w = t / p;
    let sk_tiles = match mode {
        HybridMode::OneTile if w == 0 => t,
        HybridMode::OneTile => t - w * p,
        HybridMode::TwoTile if w <= 1 => t,
        HybridMode::TwoTile => t - (w - 1) * p,
    };
    let mut ranges = if sk_tiles == 0 {
        Vec::new()
    } else {
        split_ranges(0, sk_tiles * ipt, p, Partitioning::Balanced)
    };
    ranges.extend(tile_ranges(sk_tiles..t, ipt));
    Ok(GemmPlan::from_ranges(shape, kind, ranges))
}
