//! Sparse applications written against the schedule abstraction.
//!
//! Every kernel builds a [`ScheduleAssignment`] over a tile set and runs one
//! engine task per worker. Inside a task, lanes of a group walk their pool's
//! atoms one lane at a time, keeping a running sum that is flushed whenever
//! the lane crosses into another tile.

use crate::engine::{AtomicF64Array, Engine, ExecReport, TaskStats};
use crate::formats::{csr_tile_set, CountsTileSet, CsrMatrix, DenseMatrix, TileSetView};
use crate::schedules::{build_schedule, GridConfig, ScheduleAssignment, ScheduleError, ScheduleId, SpanKind, TileSpan, WorkerAssignment};
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AppError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("graph must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("edge {from}->{to} has weight {weight}; weights must be finite and >= 0")]
    BadWeight { from: usize, to: usize, weight: f64 },
    #[error("source {vertex} outside {vertices} vertices")]
    SourceOutOfRange { vertex: usize, vertices: usize },
}

/// Calls `f(span, atom)` for every atom of `worker`, lane by lane. `flush`
/// runs whenever a lane leaves a span and at the end of each lane.
fn walk_lanes(
    worker: &WorkerAssignment,
    mut f: impl FnMut(&TileSpan, usize),
    mut flush: impl FnMut(&TileSpan),
) {
    for group in &worker.groups {
        for pool in group.pools() {
            for lane in 0..pool.lanes {
                let mut current: Option<usize> = None;
                for k in pool.lane_atoms(lane) {
                    let (i, atom) = pool.locate(k);
                    if let Some(c) = current.filter(|&c| c != i) {
                        flush(&pool.spans[c]);
                    }
                    current = Some(i);
                    f(&pool.spans[i], atom);
                }
                if let Some(c) = current {
                    flush(&pool.spans[c]);
                }
            }
        }
    }
}

/// Structural per-worker counters. Carries are charged to the worker that
/// writes the tile they fold into.
fn structural_stats(a: &ScheduleAssignment, scale: u64) -> Vec<TaskStats> {
    let mut head_of = std::collections::HashMap::new();
    for (w, worker) in a.workers.iter().enumerate() {
        for s in worker.spans().filter(|s| s.kind == SpanKind::Head) {
            head_of.insert(s.tile, w);
        }
    }
    let mut stats: Vec<TaskStats> = a
        .workers
        .iter()
        .map(|w| TaskStats {
            work: w.atom_count() as u64 * scale,
            tiles_owned: w.tiles_owned() as u64,
            partials_written: w.carries().count() as u64,
            partials_consumed: 0,
        })
        .collect();
    for worker in &a.workers {
        for c in worker.carries() {
            stats[head_of[&c.tile]].partials_consumed += 1;
        }
    }
    stats
}

/// Tile sums produced by one worker.
#[derive(Default)]
struct WorkerOutput {
    writes: Vec<(usize, f64)>,
    carries: Vec<(usize, f64)>,
}

/// Sums `value(atom)` per span of `worker`.
fn sum_spans(worker: &WorkerAssignment, value: impl Fn(usize) -> f64) -> WorkerOutput {
    let mut out = WorkerOutput::default();
    let mut sums: Vec<(usize, f64, bool)> = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    let running = Cell::new(0.0);
    walk_lanes(
        worker,
        |_, atom| running.set(running.get() + value(atom)),
        |span| {
            let slot = *index_of.entry((span.tile, span.atoms.start)).or_insert_with(|| {
                sums.push((span.tile, 0.0, span.writes_tile()));
                sums.len() - 1
            });
            sums[slot].1 += running.replace(0.0);
        },
    );
    // empty spans still own their tile
    for span in worker.spans().filter(|s| s.atoms.is_empty() && s.writes_tile()) {
        sums.push((span.tile, 0.0, true));
    }
    for (tile, sum, writes) in sums {
        if writes {
            out.writes.push((tile, sum));
        } else {
            out.carries.push((tile, sum));
        }
    }
    out
}

/// Direct writes first, then carries in worker order.
fn assemble(rows: usize, outputs: &[WorkerOutput]) -> Vec<f64> {
    let mut y = vec![0.0; rows];
    for o in outputs {
        for &(t, v) in &o.writes {
            y[t] = v;
        }
    }
    for o in outputs {
        for &(t, v) in &o.carries {
            y[t] += v;
        }
    }
    y
}

/// `y = A x` under the named schedule.
pub fn spmv(
    a: &CsrMatrix,
    x: &[f64],
    schedule: ScheduleId,
    grid: GridConfig,
    engine: &Engine,
) -> Result<(Vec<f64>, ExecReport), AppError> {
    if x.len() != a.cols {
        return Err(AppError::DimensionMismatch(format!(
            "x has {} entries, A has {} columns",
            x.len(),
            a.cols
        )));
    }
    let assignment = build_schedule(schedule, &csr_tile_set(a), grid)?;
    let stats = structural_stats(&assignment, 1);
    let (outputs, report) = engine.run_waves(assignment.workers.len(), |w| {
        let out = sum_spans(&assignment.workers[w], |i| a.values[i] * x[a.indices[i]]);
        (out, stats[w])
    });
    Ok((assemble(a.rows, &outputs), report))
}

/// `C = A B`: the SpMV body inside a loop over the columns of `B`.
pub fn spmm(
    a: &CsrMatrix,
    b: &DenseMatrix,
    schedule: ScheduleId,
    grid: GridConfig,
    engine: &Engine,
) -> Result<(DenseMatrix, ExecReport), AppError> {
    if b.rows != a.cols {
        return Err(AppError::DimensionMismatch(format!(
            "B has {} rows, A has {} columns",
            b.rows, a.cols
        )));
    }
    let assignment = build_schedule(schedule, &csr_tile_set(a), grid)?;
    let stats = structural_stats(&assignment, b.cols as u64);
    let (outputs, report) = engine.run_waves(assignment.workers.len(), |w| {
        let cols: Vec<WorkerOutput> = (0..b.cols)
            .map(|c| sum_spans(&assignment.workers[w], |i| a.values[i] * b.get(a.indices[i], c)))
            .collect();
        (cols, stats[w])
    });
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for c in 0..b.cols {
        let per_col: Vec<WorkerOutput> = outputs
            .iter()
            .map(|w| WorkerOutput {
                writes: w[c].writes.clone(),
                carries: w[c].carries.clone(),
            })
            .collect();
        for (r, v) in assemble(a.rows, &per_col).into_iter().enumerate() {
            out.set(r, c, v);
        }
    }
    Ok((out, report))
}

/// Directed graph in CSR form: row `v` lists the out-edges of vertex `v`,
/// values are edge weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adj: CsrMatrix,
}

impl Graph {
    pub fn new(adj: CsrMatrix) -> Result<Self, AppError> {
        if adj.rows != adj.cols {
            return Err(AppError::NotSquare {
                rows: adj.rows,
                cols: adj.cols,
            });
        }
        for v in 0..adj.rows {
            for e in adj.row_range(v) {
                let w = adj.values[e];
                if !(w.is_finite() && w >= 0.0) {
                    return Err(AppError::BadWeight {
                        from: v,
                        to: adj.indices[e],
                        weight: w,
                    });
                }
            }
        }
        Ok(Self { adj })
    }

    pub fn vertices(&self) -> usize {
        self.adj.rows
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adj
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsspResult {
    /// Shortest distances; unreachable vertices are `+inf`.
    pub dist: Vec<f64>,
    pub rounds: usize,
    /// One report per frontier round.
    pub reports: Vec<ExecReport>,
}

/// Frontier-based single-source shortest paths. Each round balances the
/// out-edges of the frontier vertices with `schedule` and relaxes them with
/// atomic minimum updates; improved neighbors form the next frontier.
pub fn sssp(
    g: &Graph,
    source: usize,
    schedule: ScheduleId,
    grid: GridConfig,
    engine: &Engine,
) -> Result<SsspResult, AppError> {
    let n = g.vertices();
    if source >= n {
        return Err(AppError::SourceOutOfRange { vertex: source, vertices: n });
    }
    let adj = &g.adj;
    let mut init = vec![f64::INFINITY; n];
    init[source] = 0.0;
    let dist = AtomicF64Array::new(&init);
    let mut frontier = vec![source];
    let mut reports = Vec::new();
    while !frontier.is_empty() {
        let degrees: Vec<usize> = frontier.iter().map(|&v| adj.row_range(v).len()).collect();
        let ts = CountsTileSet::new(&degrees);
        let assignment = build_schedule(schedule, &ts, grid)?;
        let next: Vec<AtomicBool> = (0..n).map(|_| AtomicBool::new(false)).collect();
        let (_, report) = engine.run_waves(assignment.workers.len(), |w| {
            let worker = &assignment.workers[w];
            walk_lanes(
                worker,
                |span, atom| {
                    let v = frontier[span.tile];
                    let e = adj.offsets[v] + (atom - ts.tile_atom_range(span.tile).start);
                    let nb = adj.indices[e];
                    let candidate = dist.load(v) + adj.values[e];
                    if candidate < dist.atomic_min_update(nb, candidate) {
                        next[nb].store(true, Ordering::Relaxed);
                    }
                },
                |_| {},
            );
            let stats = TaskStats {
                work: worker.atom_count() as u64,
                tiles_owned: worker.tiles_owned() as u64,
                ..TaskStats::default()
            };
            ((), stats)
        });
        reports.push(report);
        frontier = (0..n).filter(|&v| next[v].load(Ordering::Relaxed)).collect();
    }
    Ok(SsspResult {
        dist: dist.to_vec(),
        rounds: reports.len(),
        reports,
    })
}

/// Thresholds for choosing between tile-mapped and merge-path SpMV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub alpha: usize,
    pub beta: usize,
    /// Prefer group-mapped over thread-mapped for small matrices whose mean
    /// row length exceeds `mean_row_threshold`.
    pub size_rule: bool,
    pub mean_row_threshold: f64,
    pub group_size: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            alpha: 500,
            beta: 10_000,
            size_rule: false,
            mean_row_threshold: 4.0,
            group_size: 32,
        }
    }
}

/// Merge path, unless the matrix is small: fewer than `alpha` rows or
/// columns and fewer than `beta` nonzeros.
pub fn select_schedule_dims(rows: usize, cols: usize, nnz: usize, cfg: &SelectorConfig) -> ScheduleId {
    let small = (rows < cfg.alpha || cols < cfg.alpha) && nnz < cfg.beta;
    if !small {
        return ScheduleId::MergePath;
    }
    let mean = nnz as f64 / rows.max(1) as f64;
    if cfg.size_rule && mean > cfg.mean_row_threshold {
        ScheduleId::GroupMapped
    } else {
        ScheduleId::ThreadMapped
    }
}

pub fn select_schedule(a: &CsrMatrix, cfg: &SelectorConfig) -> ScheduleId {
    select_schedule_dims(a.rows, a.cols, a.nnz(), cfg)
}
