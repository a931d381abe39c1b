//! Analytical CTA runtime model for Stream-K grids.
//!
//! For a grid of `g` CTAs each CTA runs `ItersPerCta(g)` MAC-loop iterations
//! and a split tile gathers partials from `FixupPeers(g)` CTAs:
//!
//! ```text
//! ItersPerCta(g) = ceil(total_iters / g)
//! FixupPeers(g)  = ceil(iters_per_tile / ItersPerCta(g))
//! time(g)        = a + b*[FixupPeers(g) > 1] + c*ItersPerCta(g) + d*(FixupPeers(g) - 1)
//! ```

use crate::engine::{Engine, EngineError};
use crate::formats::DenseMatrix;
use crate::streamk::{execute_plan, make_plan, GemmShape, PlanKind, StreamKError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("grid size must be at least 1")]
    ZeroGrid,
    #[error("model constants must be finite and non-negative, got {0:?}")]
    InvalidParams(ModelParams),
    #[error("need at least 4 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has an invalid time {time}")]
    InvalidSample { index: usize, time: f64 },
    #[error("samples cannot identify constants {}", .0.join(", "))]
    RankDeficient(Vec<&'static str>),
    #[error("params store: {0}")]
    Store(String),
    #[error(transparent)]
    Gemm(#[from] StreamKError),
}

impl From<EngineError> for ModelError {
    fn from(e: EngineError) -> Self {
        ModelError::Gemm(StreamKError::Engine(e))
    }
}

/// Workload constants, in abstract time units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Fixed cost per CTA.
    pub a: f64,
    /// Extra cost when a CTA takes part in a split tile.
    pub b: f64,
    /// Cost per MAC-loop iteration.
    pub c: f64,
    /// Cost per additional peer accumulated.
    pub d: f64,
}

impl ModelParams {
    pub const NAMES: [&'static str; 4] = ["a", "b", "c", "d"];

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, ModelError> {
        let p = Self { a, b, c, d };
        if p.as_array().iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(p)
        } else {
            Err(ModelError::InvalidParams(p))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }
}

/// # Panics
/// If `g == 0`.
pub fn iters_per_cta(shape: &GemmShape, g: usize) -> usize {
    assert!(g >= 1, "grid size must be at least 1");
    shape.total_iters().div_ceil(g)
}

/// # Panics
/// If `g == 0`.
pub fn fixup_peers(shape: &GemmShape, g: usize) -> usize {
    shape.iters_per_tile().div_ceil(iters_per_cta(shape, g))
}

/// Regressors `[1, [peers > 1], iters, peers - 1]` of the time formula.
fn features(shape: &GemmShape, g: usize) -> [f64; 4] {
    let ipc = iters_per_cta(shape, g);
    let peers = fixup_peers(shape, g);
    [1.0, f64::from(u8::from(peers > 1)), ipc as f64, (peers - 1) as f64]
}

/// # Panics
/// If `g == 0`.
pub fn cta_time(shape: &GemmShape, g: usize, params: &ModelParams) -> f64 {
    features(shape, g)
        .iter()
        .zip(params.as_array())
        .map(|(x, p)| x * p)
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    pub g_best: usize,
    pub predicted_time: f64,
    pub candidates_evaluated: usize,
}

/// Which grid size wins when predicted times are equal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    #[default]
    Larger,
    Smaller,
}

/// Exhaustive argmin of `cta_time` over `g` in `1..=procs`; ties go to the
/// larger grid.
pub fn select_grid(shape: &GemmShape, params: &ModelParams, procs: usize) -> Result<GridChoice, ModelError> {
    select_grid_with(shape, params, procs, TieBreak::Larger)
}

pub fn select_grid_with(
    shape: &GemmShape,
    params: &ModelParams,
    procs: usize,
    tie: TieBreak,
) -> Result<GridChoice, ModelError> {
    if procs == 0 {
        return Err(ModelError::ZeroGrid);
    }
    let mut best = GridChoice {
        g_best: 1,
        predicted_time: cta_time(shape, 1, params),
        candidates_evaluated: procs,
    };
    for g in 2..=procs {
        let t = cta_time(shape, g, params);
        let wins = match tie {
            TieBreak::Larger => t <= best.predicted_time,
            TieBreak::Smaller => t < best.predicted_time,
        };
        if wins {
            best.g_best = g;
            best.predicted_time = t;
        }
    }
    Ok(best)
}

/// One measurement: the time of a `g`-CTA Stream-K run of `shape`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub shape: GemmShape,
    pub g: usize,
    pub time: f64,
}

const RANK_TOL: f64 = 1e-9;

/// Non-negative least-squares fit of `(a, b, c, d)` to `samples`.
///
/// The design has four columns, so the exact NNLS optimum is found by
/// solving the unconstrained problem on each of the 16 column subsets and
/// keeping the best feasible one.
pub fn fit_params(samples: &[Sample]) -> Result<ModelParams, ModelError> {
    if samples.len() < 4 {
        return Err(ModelError::TooFewSamples(samples.len()));
    }
    for (index, s) in samples.iter().enumerate() {
        if !s.time.is_finite() || s.time < 0.0 {
            return Err(ModelError::InvalidSample { index, time: s.time });
        }
        if s.g == 0 {
            return Err(ModelError::ZeroGrid);
        }
    }
    let rows: Vec<[f64; 4]> = samples.iter().map(|s| features(&s.shape, s.g)).collect();
    let x = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]);
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.time));

    // column scaling keeps the rank test independent of iteration magnitudes
    let norms: Vec<f64> = (0..4).map(|j| x.column(j).norm()).collect();
    let scaled = DMatrix::from_fn(x.nrows(), 4, |i, j| {
        if norms[j] == 0.0 {
            0.0
        } else {
            x[(i, j)] / norms[j]
        }
    });
    let svd = scaled.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sigma_max = svd.singular_values.max();
    let mut unidentifiable = [false; 4];
    for (r, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma <= RANK_TOL * sigma_max.max(1.0) {
            for (j, flag) in unidentifiable.iter_mut().enumerate() {
                if v_t[(r, j)].abs() > 1e-6 {
                    *flag = true;
                }
            }
        }
    }
    if unidentifiable.iter().any(|&u| u) {
        let names = (0..4)
            .filter(|&j| unidentifiable[j])
            .map(|j| ModelParams::NAMES[j])
            .collect();
        return Err(ModelError::RankDeficient(names));
    }

    let mut best: Option<([f64; 4], f64)> = None;
    for mask in 0u8..16 {
        let cols: Vec<usize> = (0..4).filter(|j| mask & (1 << j) != 0).collect();
        let mut coef = [0.0; 4];
        if !cols.is_empty() {
            let sub = DMatrix::from_fn(scaled.nrows(), cols.len(), |i, j| scaled[(i, cols[j])]);
            let Ok(sol) = sub.svd(true, true).solve(&y, 1e-14) else {
                continue;
            };
            if sol.iter().any(|&v| v < 0.0) {
                continue;
            }
            for (k, &j) in cols.iter().enumerate() {
                coef[j] = sol[k] / norms[j];
            }
        }
        let fitted = &x * DVector::from_row_slice(&coef);
        let resid = (&y - fitted).norm_squared();
        if best.is_none_or(|(_, r)| resid < r) {
            best = Some((coef, resid));
        }
    }
    let ([a, b, c, d], _) = best.expect("empty subset is always feasible");
    ModelParams::new(a, b, c, d)
}

/// Times Stream-K runs of `shape` at each grid size in `grids`.
///
/// A sample's time is the slowest CTA, in microseconds. Phased engines give
/// the cleanest numbers: every CTA then runs without competing for a core.
pub fn measure_samples(
    shape: GemmShape,
    grids: &[usize],
    engine: &Engine,
    seed: u64,
) -> Result<Vec<Sample>, ModelError> {
    let mut cfg = engine.config().clone();
    cfg.record_timing = true;
    let engine = Engine::new(cfg);
    let a = DenseMatrix::random(shape.m, shape.k, seed);
    let b = DenseMatrix::random(shape.k, shape.n, seed.wrapping_add(1));
    grids
        .iter()
        .map(|&g| {
            let plan = make_plan(shape, PlanKind::StreamK { g })?;
            let (_, report) = execute_plan(&plan, &a, &b, &engine)?;
            let timing = report.timing.expect("timing enabled");
            let slowest = timing.task_secs.iter().copied().fold(0.0, f64::max);
            Ok(Sample {
                shape,
                g,
                time: slowest * 1e6,
            })
        })
        .collect()
}

/// Identifies one fitted parameter set: blocking, element type and machine.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamsKey {
    pub blk: [usize; 3],
    pub precision: String,
    pub machine: String,
}

impl ParamsKey {
    pub fn new(blk: [usize; 3], precision: &str, machine: &str) -> Self {
        Self {
            blk,
            precision: precision.to_string(),
            machine: machine.to_string(),
        }
    }

    pub fn encode(&self) -> String {
        let [m, n, k] = self.blk;
        format!("{m}x{n}x{k}/{}/{}", self.precision, self.machine)
    }
}

/// Fitted constants persisted as JSON, keyed `"BMxBNxBK/precision/machine"`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamsStore {
    pub entries: BTreeMap<String, ModelParams>,
}

impl ParamsStore {
    pub fn get(&self, key: &ParamsKey) -> Option<ModelParams> {
        self.entries.get(&key.encode()).copied()
    }

    pub fn insert(&mut self, key: &ParamsKey, params: ModelParams) {
        self.entries.insert(key.encode(), params);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let store: Self = serde_json::from_str(text).map_err(|e| ModelError::Store(e.to_string()))?;
        for p in store.entries.values() {
            ModelParams::new(p.a, p.b, p.c, p.d)?;
        }
        Ok(store)
    }

    /// A missing file is an empty store.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(ModelError::Store(format!("{}: {e}", path.display()))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()).map_err(|e| ModelError::Store(format!("{}: {e}", path.display())))
    }
}
