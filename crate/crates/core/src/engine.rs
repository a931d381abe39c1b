//! CPU stand-in for a grid of GPU thread blocks.
//!
//! [`Engine::run_waves`] dispatches independent tasks to `hardware_workers`
//! OS threads through a shared work queue, the way a block scheduler fills
//! SMs in oversubscribed waves. [`Engine::run_grid`] runs a fixed grid of
//! cooperating CTAs that exchange partial results through a [`FlagSet`] and
//! a [`PartialsBuffer`].
//!
//! Reports use equal-cost wave accounting: task `i` is charged to hardware
//! worker `i % p` in wave `i / p`, independent of actual dispatch order.
//! That keeps reports deterministic; wall-clock figures are only added when
//! `record_timing` is set.

use crate::balance::quantization_efficiency;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("concurrent grid of {grid} CTAs exceeds {workers} hardware workers and could deadlock on flag waits; use phased mode")]
    Oversubscribed { grid: usize, workers: usize },
    #[error("deadlock sentinel: CTA {cta} waited {waited:?} for flag {flag}")]
    Deadlock {
        cta: usize,
        flag: usize,
        waited: Duration,
    },
    #[error("flag {flag} signaled twice")]
    DoubleSignal { flag: usize },
    #[error("CTA {cta} read partials of {flag} before the flag was set")]
    UnpublishedRead { cta: usize, flag: usize },
    #[error("grid aborted after a failure in another CTA")]
    Aborted,
    #[error("task failed: {0}")]
    Task(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// All CTAs of a grid run at once and block on each other's flags.
    Concurrent,
    /// Two passes: every CTA's MAC work and partial stores, then every
    /// CTA's accumulation. No CTA ever blocks.
    Phased,
}

impl fmt::Display for ExecMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecMode::Concurrent => "concurrent",
            ExecMode::Phased => "phased",
        })
    }
}

impl FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concurrent" => Ok(ExecMode::Concurrent),
            "phased" => Ok(ExecMode::Phased),
            other => Err(format!("unknown mode '{other}' (expected concurrent or phased)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    /// Parallel lanes; plays the role of the SM count `p`.
    pub hardware_workers: usize,
    pub mode: ExecMode,
    /// Upper bound on any single flag wait.
    pub watchdog: Duration,
    /// Reject reads of partials whose flag is unset.
    pub check_flags: bool,
    pub record_timing: bool,
}

impl EngineConfig {
    pub fn new(hardware_workers: usize, mode: ExecMode) -> Self {
        Self {
            hardware_workers: hardware_workers.max(1),
            mode,
            ..Self::default()
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            hardware_workers: thread::available_parallelism().map_or(1, |n| n.get()),
            mode: ExecMode::Concurrent,
            watchdog: Duration::from_secs(30),
            check_flags: cfg!(debug_assertions),
            record_timing: false,
        }
    }
}

/// Counters returned by one task or CTA.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    /// Atoms processed or MAC-loop iterations executed.
    pub work: u64,
    pub tiles_owned: u64,
    pub partials_written: u64,
    pub partials_consumed: u64,
}

impl std::ops::AddAssign for TaskStats {
    fn add_assign(&mut self, o: Self) {
        self.work += o.work;
        self.tiles_owned += o.tiles_owned;
        self.partials_written += o.partials_written;
        self.partials_consumed += o.partials_consumed;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: usize,
    pub hw_worker: usize,
    pub wave: usize,
    #[serde(flatten)]
    pub stats: TaskStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub id: usize,
    pub tasks: usize,
    pub work: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_secs: f64,
    /// Busy time per OS worker thread.
    pub busy_secs: Vec<f64>,
    pub busy_imbalance_secs: f64,
    /// Time spent inside each task or CTA, in task order.
    pub task_secs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecReport {
    pub mode: ExecMode,
    pub hardware_workers: usize,
    pub num_tasks: usize,
    pub waves: usize,
    /// Fraction of hardware workers busy in the last wave.
    pub final_wave_occupancy: f64,
    /// Equal-cost utilization ceiling, `tasks / (waves * workers)`.
    pub utilization: f64,
    /// Max minus min work charged to a hardware worker.
    pub imbalance: u64,
    pub total_work: u64,
    pub partials_written: u64,
    pub partials_consumed: u64,
    pub tasks: Vec<TaskRecord>,
    pub workers: Vec<WorkerRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

impl ExecReport {
    fn build(cfg: &EngineConfig, stats: Vec<TaskStats>, timing: Option<Timing>) -> Self {
        let p = cfg.hardware_workers;
        let n = stats.len();
        let waves = n.div_ceil(p);
        let (final_wave_occupancy, utilization) = if n == 0 {
            (0.0, 1.0)
        } else {
            let last = n - (waves - 1) * p;
            (
                last as f64 / p as f64,
                quantization_efficiency(n, p).expect("n, p >= 1"),
            )
        };
        let tasks: Vec<TaskRecord> = stats
            .into_iter()
            .enumerate()
            .map(|(id, stats)| TaskRecord {
                id,
                hw_worker: id % p,
                wave: id / p,
                stats,
            })
            .collect();
        let mut workers: Vec<WorkerRecord> = (0..p)
            .map(|id| WorkerRecord {
                id,
                tasks: 0,
                work: 0,
            })
            .collect();
        for t in &tasks {
            workers[t.hw_worker].tasks += 1;
            workers[t.hw_worker].work += t.stats.work;
        }
        let max = workers.iter().map(|w| w.work).max().unwrap_or(0);
        let min = workers.iter().map(|w| w.work).min().unwrap_or(0);
        Self {
            mode: cfg.mode,
            hardware_workers: p,
            num_tasks: n,
            waves,
            final_wave_occupancy,
            utilization,
            imbalance: max - min,
            total_work: tasks.iter().map(|t| t.stats.work).sum(),
            partials_written: tasks.iter().map(|t| t.stats.partials_written).sum(),
            partials_consumed: tasks.iter().map(|t| t.stats.partials_consumed).sum(),
            tasks,
            workers,
            timing,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per task.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id",
            "hw_worker",
            "wave",
            "work",
            "tiles_owned",
            "partials_written",
            "partials_consumed",
        ])
        .expect("in-memory csv");
        for t in &self.tasks {
            w.write_record([
                t.id.to_string(),
                t.hw_worker.to_string(),
                t.wave.to_string(),
                t.stats.work.to_string(),
                t.stats.tiles_owned.to_string(),
                t.stats.partials_written.to_string(),
                t.stats.partials_consumed.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// One completion flag per CTA. A flag goes from unset to set exactly once;
/// `signal` publishes with release ordering and `wait` observes with
/// acquire ordering, so anything written before the signal is visible after
/// the wait returns.
pub struct FlagSet {
    flags: Vec<AtomicBool>,
    aborted: AtomicBool,
    lock: Mutex<()>,
    cv: Condvar,
}

impl FlagSet {
    pub fn new(n: usize) -> Self {
        Self {
            flags: (0..n).map(|_| AtomicBool::new(false)).collect(),
            aborted: AtomicBool::new(false),
            lock: Mutex::new(()),
            cv: Condvar::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_set(&self, flag: usize) -> bool {
        self.flags[flag].load(Ordering::Acquire)
    }

    pub fn signal(&self, flag: usize) -> Result<(), EngineError> {
        if self.flags[flag].swap(true, Ordering::AcqRel) {
            return Err(EngineError::DoubleSignal { flag });
        }
        let _g = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        self.cv.notify_all();
        Ok(())
    }

    fn abort(&self) {
        self.aborted.store(true, Ordering::Release);
        let _g = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        self.cv.notify_all();
    }

    /// Blocks until `flag` is set, the grid aborts, or `watchdog` elapses.
    pub fn wait(&self, cta: usize, flag: usize, watchdog: Duration) -> Result<(), EngineError> {
        if self.is_set(flag) {
            return Ok(());
        }
        let start = Instant::now();
        let mut guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if self.is_set(flag) {
                return Ok(());
            }
            if self.aborted.load(Ordering::Acquire) {
                return Err(EngineError::Aborted);
            }
            let waited = start.elapsed();
            if waited >= watchdog {
                return Err(EngineError::Deadlock { cta, flag, waited });
            }
            guard = self
                .cv
                .wait_timeout(guard, watchdog - waited)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

/// What a CTA sees of the grid: its peers' flags and the engine policy.
pub struct CtaContext<'a> {
    pub cta: usize,
    flags: &'a FlagSet,
    cfg: &'a EngineConfig,
}

impl CtaContext<'_> {
    pub fn signal(&self, flag: usize) -> Result<(), EngineError> {
        self.flags.signal(flag)
    }

    /// In phased mode every producer has finished before anyone waits, so an
    /// unset flag is reported immediately instead of blocking.
    pub fn wait(&self, flag: usize) -> Result<(), EngineError> {
        match self.cfg.mode {
            ExecMode::Concurrent => self.flags.wait(self.cta, flag, self.cfg.watchdog),
            ExecMode::Phased if self.flags.is_set(flag) => Ok(()),
            ExecMode::Phased => Err(EngineError::Deadlock {
                cta: self.cta,
                flag,
                waited: Duration::ZERO,
            }),
        }
    }
}

/// Per-CTA partial-sum slots, paired with the grid's flags.
pub struct PartialsBuffer {
    slots: Vec<Mutex<Vec<f64>>>,
}

impl PartialsBuffer {
    pub fn new(n: usize) -> Self {
        Self {
            slots: (0..n).map(|_| Mutex::new(Vec::new())).collect(),
        }
    }

    /// Stores `data` in this CTA's slot and signals its flag.
    pub fn publish(&self, ctx: &CtaContext<'_>, data: Vec<f64>) -> Result<(), EngineError> {
        *self.slots[ctx.cta].lock().unwrap_or_else(|e| e.into_inner()) = data;
        ctx.signal(ctx.cta)
    }

    /// Waits for `peer`'s flag, then adds its partials into `acc`.
    pub fn accumulate_from(
        &self,
        ctx: &CtaContext<'_>,
        peer: usize,
        acc: &mut [f64],
    ) -> Result<(), EngineError> {
        ctx.wait(peer)?;
        if ctx.cfg.check_flags && !ctx.flags.is_set(peer) {
            return Err(EngineError::UnpublishedRead {
                cta: ctx.cta,
                flag: peer,
            });
        }
        let slot = self.slots[peer].lock().unwrap_or_else(|e| e.into_inner());
        for (a, p) in acc.iter_mut().zip(slot.iter()) {
            *a += p;
        }
        Ok(())
    }
}

/// A grid program split into the work done before and after flag waits.
/// Concurrent mode runs `produce` then `consume` on one thread per CTA;
/// phased mode runs every `produce`, then every `consume`.
pub trait GridProgram: Sync {
    fn produce(&self, ctx: &CtaContext<'_>) -> Result<TaskStats, EngineError>;
    fn consume(&self, ctx: &CtaContext<'_>) -> Result<TaskStats, EngineError>;
}

#[derive(Clone, Debug)]
pub struct Engine {
    cfg: EngineConfig,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Self {
        Self { cfg }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Runs `n` independent tasks through a work queue on up to
    /// `hardware_workers` threads. Results come back in task order.
    pub fn run_waves<T, F>(&self, n: usize, task: F) -> (Vec<T>, ExecReport)
    where
        T: Send,
        F: Fn(usize) -> (T, TaskStats) + Sync,
    {
        let start = Instant::now();
        let (done, busy) = self.queue(n, task);
        let task_time: Vec<Duration> = done.iter().map(|r| r.1).collect();
        let timing = self.timing(start, &busy, &task_time);
        let (values, stats): (Vec<T>, Vec<TaskStats>) = done.into_iter().map(|(r, _)| r).unzip();
        (values, ExecReport::build(&self.cfg, stats, timing))
    }

    /// Runs a grid of `grid` CTAs of `program`.
    pub fn run_grid<P: GridProgram>(&self, grid: usize, program: &P) -> Result<ExecReport, EngineError> {
        let flags = FlagSet::new(grid);
        let start = Instant::now();
        let ctx = |cta| CtaContext {
            cta,
            flags: &flags,
            cfg: &self.cfg,
        };
        let (stats, busy, task_time) = match self.cfg.mode {
            ExecMode::Concurrent => {
                if grid > self.cfg.hardware_workers {
                    return Err(EngineError::Oversubscribed {
                        grid,
                        workers: self.cfg.hardware_workers,
                    });
                }
                let results: Vec<(Result<TaskStats, EngineError>, Duration)> = thread::scope(|s| {
                    let handles: Vec<_> = (0..grid)
                        .map(|cta| {
                            let ctx = &ctx;
                            let flags = &flags;
                            s.spawn(move || {
                                let t0 = Instant::now();
                                let c = ctx(cta);
                                let r = program.produce(&c).and_then(|mut st| {
                                    st += program.consume(&c)?;
                                    Ok(st)
                                });
                                if r.is_err() {
                                    flags.abort();
                                }
                                (r, t0.elapsed())
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
                        .collect()
                });
                let task_time: Vec<Duration> = results.iter().map(|r| r.1).collect();
                let stats = collect_results(results.into_iter().map(|r| r.0))?;
                (stats, task_time.clone(), task_time)
            }
            ExecMode::Phased => {
                let mut stats = vec![TaskStats::default(); grid];
                let mut task_time = vec![Duration::ZERO; grid];
                let mut busy = vec![Duration::ZERO; self.cfg.hardware_workers.min(grid).max(1)];
                for pass in 0..2 {
                    let (results, b) = self.queue(grid, |cta| {
                        if pass == 0 {
                            program.produce(&ctx(cta))
                        } else {
                            program.consume(&ctx(cta))
                        }
                    });
                    for (t, (_, d)) in task_time.iter_mut().zip(&results) {
                        *t += *d;
                    }
                    for (acc, s) in stats.iter_mut().zip(collect_results(results.into_iter().map(|r| r.0))?) {
                        *acc += s;
                    }
                    for (acc, d) in busy.iter_mut().zip(b) {
                        *acc += d;
                    }
                }
                (stats, busy, task_time)
            }
        };
        let timing = self.timing(start, &busy, &task_time);
        Ok(ExecReport::build(&self.cfg, stats, timing))
    }

    /// Work queue over `0..n` on up to `hardware_workers` threads. Returns
    /// `(result, duration)` in task order and the busy time of each thread.
    fn queue<R, F>(&self, n: usize, f: F) -> (Vec<(R, Duration)>, Vec<Duration>)
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        let next = AtomicUsize::new(0);
        let threads = self.cfg.hardware_workers.min(n).max(1);
        let mut results: Vec<(usize, R, Duration)> = Vec::with_capacity(n);
        let mut busy = Vec::with_capacity(threads);
        thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    s.spawn(|| {
                        let mut out = Vec::new();
                        let mut busy = Duration::ZERO;
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= n {
                                break;
                            }
                            let t0 = Instant::now();
                            let r = f(i);
                            let d = t0.elapsed();
                            busy += d;
                            out.push((i, r, d));
                        }
                        (out, busy)
                    })
                })
                .collect();
            for h in handles {
                let (out, b) = h.join().unwrap_or_else(|e| std::panic::resume_unwind(e));
                results.extend(out);
                busy.push(b);
            }
        });
        results.sort_unstable_by_key(|r| r.0);
        (results.into_iter().map(|(_, r, d)| (r, d)).collect(), busy)
    }

    fn timing(&self, start: Instant, busy: &[Duration], tasks: &[Duration]) -> Option<Timing> {
        if !self.cfg.record_timing {
            return None;
        }
        let busy_secs: Vec<f64> = busy.iter().map(Duration::as_secs_f64).collect();
        let max = busy_secs.iter().copied().fold(0.0, f64::max);
        let min = busy_secs.iter().copied().fold(f64::INFINITY, f64::min);
        Some(Timing {
            elapsed_secs: start.elapsed().as_secs_f64(),
            busy_imbalance_secs: if busy_secs.is_empty() { 0.0 } else { max - min },
            busy_secs,
            task_secs: tasks.iter().map(Duration::as_secs_f64).collect(),
        })
    }
}

/// First real failure wins over the `Aborted` errors it caused in peers.
fn collect_results(
    results: impl Iterator<Item = Result<TaskStats, EngineError>>,
) -> Result<Vec<TaskStats>, EngineError> {
    let mut out = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok(s) => out.push(s),
            Err(EngineError::Aborted) => {
                first_err.get_or_insert(EngineError::Aborted);
            }
            Err(e) => {
                if matches!(first_err, None | Some(EngineError::Aborted)) {
                    first_err = Some(e);
                }
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Shared `f64` array supporting atomic minimum updates.
pub struct AtomicF64Array {
    cells: Vec<AtomicU64>,
}

impl AtomicF64Array {
    pub fn new(values: &[f64]) -> Self {
        Self {
            cells: values.iter().map(|v| AtomicU64::new(v.to_bits())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn load(&self, index: usize) -> f64 {
        f64::from_bits(self.cells[index].load(Ordering::Acquire))
    }

    pub fn store(&self, index: usize, value: f64) {
        self.cells[index].store(value.to_bits(), Ordering::Release);
    }

    /// Atomically sets `array[index] = min(old, candidate)` and returns `old`.
    pub fn atomic_min_update(&self, index: usize, candidate: f64) -> f64 {
        let cell = &self.cells[index];
        let mut current = cell.load(Ordering::Acquire);
        loop {
            let old = f64::from_bits(current);
            if candidate.partial_cmp(&old) != Some(std::cmp::Ordering::Less) {
                return old;
            }
            match cell.compare_exchange_weak(
                current,
                candidate.to_bits(),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return old,
                Err(actual) => current = actual,
            }
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }
}
