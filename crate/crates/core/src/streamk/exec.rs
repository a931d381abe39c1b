use super::{GemmPlan, GemmShape, StreamKError};
use crate::engine::{CtaContext, Engine, EngineError, ExecReport, GridProgram, PartialsBuffer, TaskStats};
use crate::formats::DenseMatrix;
use std::sync::{Mutex, OnceLock};

fn check_operands(a: &DenseMatrix, b: &DenseMatrix, s: &GemmShape) -> Result<(), StreamKError> {
    if a.rows != s.m || a.cols != s.k || b.rows != s.k || b.cols != s.n {
        return Err(StreamKError::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}, shape wants {}x{} and {}x{}",
            a.rows, a.cols, b.rows, b.cols, s.m, s.k, s.k, s.n
        )));
    }
    Ok(())
}

/// Adds iterations `begin..end` of `tile` into a `blk_m x blk_n` accumulator.
/// Rows and columns past the matrix edge stay zero.
///
/// For every output element the sum runs over k in ascending order, the same
/// order [`sequential_gemm`] uses.
fn mac_into(
    a: &DenseMatrix,
    b: &DenseMatrix,
    s: &GemmShape,
    tile: usize,
    begin: usize,
    end: usize,
    acc: &mut [f64],
) {
    let (tm, tn) = s.tile_coords(tile);
    let m0 = tm * s.blk_m;
    let m1 = (m0 + s.blk_m).min(s.m);
    let n0 = tn * s.blk_n;
    let n1 = (n0 + s.blk_n).min(s.n);
    let width = n1 - n0;
    for kk in begin..end {
        let k0 = kk * s.blk_k;
        let k1 = (k0 + s.blk_k).min(s.k);
        for i in 0..m1 - m0 {
            let arow = &a.data[(m0 + i) * s.k..(m0 + i + 1) * s.k];
            let crow = &mut acc[i * s.blk_n..i * s.blk_n + width];
            for (k, &aik) in arow.iter().enumerate().take(k1).skip(k0) {
                let brow = &b.data[k * s.n + n0..k * s.n + n1];
                for (c, &bv) in crow.iter_mut().zip(brow) {
                    *c += aik * bv;
                }
            }
        }
    }
}

/// Copies the in-bounds part of a tile accumulator into `c`.
fn store_tile(c: &mut DenseMatrix, s: &GemmShape, tile: usize, acc: &[f64]) {
    let (tm, tn) = s.tile_coords(tile);
    let m0 = tm * s.blk_m;
    let m1 = (m0 + s.blk_m).min(s.m);
    let n0 = tn * s.blk_n;
    let n1 = (n0 + s.blk_n).min(s.n);
    for i in 0..m1 - m0 {
        c.data[(m0 + i) * s.n + n0..(m0 + i) * s.n + n1]
            .copy_from_slice(&acc[i * s.blk_n..i * s.blk_n + (n1 - n0)]);
    }
}

/// `C = A * B` by the blocked loop nest: output tiles in m→n order, k slabs
/// ascending within a tile.
pub fn sequential_gemm(a: &DenseMatrix, b: &DenseMatrix, s: &GemmShape) -> Result<DenseMatrix, StreamKError> {
    check_operands(a, b, s)?;
    let mut c = DenseMatrix::zeros(s.m, s.n);
    let mut acc = vec![0.0; s.blk_m * s.blk_n];
    for tile in 0..s.tiles() {
        acc.fill(0.0);
        mac_into(a, b, s, tile, 0, s.iters_per_tile(), &mut acc);
        store_tile(&mut c, s, tile, &acc);
    }
    Ok(c)
}

/// Runs MAC-loop iterations `begin..end` of `tile` into a fresh
/// `blk_m x blk_n` accumulator.
pub fn mac_loop(
    a: &DenseMatrix,
    b: &DenseMatrix,
    s: &GemmShape,
    tile: usize,
    begin: usize,
    end: usize,
) -> Result<DenseMatrix, StreamKError> {
    check_operands(a, b, s)?;
    if tile >= s.tiles() {
        return Err(StreamKError::TileOutOfRange {
            tile,
            tiles: s.tiles(),
        });
    }
    if begin > end || end > s.iters_per_tile() {
        return Err(StreamKError::IterRangeOutOfBounds {
            begin,
            end,
            iters_per_tile: s.iters_per_tile(),
        });
    }
    let mut acc = DenseMatrix::zeros(s.blk_m, s.blk_n);
    mac_into(a, b, s, tile, begin, end, &mut acc.data);
    Ok(acc)
}

/// Per-CTA program: MAC work and partial publication in `produce`, peer
/// accumulation in `consume`.
/// Owned tile awaiting peers: `(tile, accumulator, peers)`.
type Pending<'a> = (usize, Vec<f64>, &'a [usize]);

struct PlanProgram<'a> {
    plan: &'a GemmPlan,
    a: &'a DenseMatrix,
    b: &'a DenseMatrix,
    partials: PartialsBuffer,
    pending: Vec<Mutex<Option<Pending<'a>>>>,
    tiles: Vec<OnceLock<Vec<f64>>>,
    peers_of: Vec<Option<&'a [usize]>>,
}

impl GridProgram for PlanProgram<'_> {
    fn produce(&self, ctx: &CtaContext<'_>) -> Result<TaskStats, EngineError> {
        let s = &self.plan.shape;
        let ipt = s.iters_per_tile();
        let (begin, end) = self.plan.cta_ranges[ctx.cta];
        let mut stats = TaskStats {
            work: (end - begin) as u64,
            ..TaskStats::default()
        };
        let mut iter = begin;
        while iter < end {
            let tile = iter / ipt;
            let local_begin = iter - tile * ipt;
            let local_end = (end - tile * ipt).min(ipt);
            let mut acc = vec![0.0; s.blk_m * s.blk_n];
            mac_into(self.a, self.b, s, tile, local_begin, local_end, &mut acc);
            if local_begin > 0 {
                self.partials.publish(ctx, acc)?;
                stats.partials_written += 1;
            } else if let Some(peers) = self.peers_of[tile] {
                *self.pending[ctx.cta].lock().unwrap_or_else(|e| e.into_inner()) = Some((tile, acc, peers));
            } else {
                self.write_tile(tile, acc)?;
                stats.tiles_owned += 1;
            }
            iter = tile * ipt + local_end;
        }
        Ok(stats)
    }

    fn consume(&self, ctx: &CtaContext<'_>) -> Result<TaskStats, EngineError> {
        let pending = self.pending[ctx.cta].lock().unwrap_or_else(|e| e.into_inner()).take();
        let Some((tile, mut acc, peers)) = pending else {
            return Ok(TaskStats::default());
        };
        for &peer in peers {
            self.partials.accumulate_from(ctx, peer, &mut acc)?;
        }
        self.write_tile(tile, acc)?;
        Ok(TaskStats {
            tiles_owned: 1,
            partials_consumed: peers.len() as u64,
            ..TaskStats::default()
        })
    }
}

impl PlanProgram<'_> {
    fn write_tile(&self, tile: usize, acc: Vec<f64>) -> Result<(), EngineError> {
        self.tiles[tile]
            .set(acc)
            .map_err(|_| EngineError::Task(format!("tile {tile} written twice")))
    }
}

/// Executes `plan` on the engine's CTA grid. Peer partials are added in
/// ascending CTA order, so the result does not depend on the engine mode.
pub fn execute_plan(
    plan: &GemmPlan,
    a: &DenseMatrix,
    b: &DenseMatrix,
    engine: &Engine,
) -> Result<(DenseMatrix, ExecReport), StreamKError> {
    let s = &plan.shape;
    check_operands(a, b, s)?;
    plan.validate()?;
    let mut peers_of = vec![None; s.tiles()];
    for f in &plan.fixup {
        peers_of[f.tile] = Some(f.peers.as_slice());
    }
    let program = PlanProgram {
        plan,
        a,
        b,
        partials: PartialsBuffer::new(plan.grid),
        pending: (0..plan.grid).map(|_| Mutex::new(None)).collect(),
        tiles: (0..s.tiles()).map(|_| OnceLock::new()).collect(),
        peers_of,
    };
    let report = engine.run_grid(plan.grid, &program)?;
    let mut c = DenseMatrix::zeros(s.m, s.n);
    for (tile, slot) in program.tiles.iter().enumerate() {
        let acc = slot
            .get()
            .ok_or_else(|| StreamKError::InvalidPlan(format!("tile {tile} never written")))?;
        store_tile(&mut c, s, tile, acc);
    }
    Ok((c, report))
}
