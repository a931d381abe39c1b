use crate::{Command, ExecArgs, Failure, FitArgs, Format, GemmArgs, MatrixArgs, ModelArgs, OutputArgs, ScheduleChoice, SparseArgs};
use lbwork::apps::{select_schedule, spmm, spmv, sssp, Graph, SelectorConfig};
use lbwork::engine::{Engine, EngineConfig, ExecReport};
use lbwork::formats::{coo_to_csr, parse_matrix_market, synth_matrix, CsrMatrix, DenseMatrix};
use lbwork::model::{
    cta_time, fit_params, fixup_peers, iters_per_cta, measure_samples, select_grid_with, GridChoice, ModelParams,
    ParamsKey, ParamsStore, Sample,
};
use lbwork::schedules::{GridConfig, ScheduleId};
use lbwork::streamk::{execute_plan, make_plan, sequential_gemm, GemmPlan, GemmShape, PlanKind, PlanKindId};
use lbwork::verify::{gemm_scale, max_relative_error, spmv_reference, spmv_scale, sssp_reference};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const SPARSE_TOL: f64 = 1e-10;
const GEMM_TOL: f64 = 1e-12;
const PRECISION: &str = "f64";

pub(crate) fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Spmv(args) => run_spmv(&args),
        Command::Spmm { sparse, cols } => run_spmm(&sparse, cols),
        Command::Sssp { sparse, source } => run_sssp(&sparse, source),
        Command::Gemm {
            gemm,
            exec,
            verify,
            output,
        } => run_gemm(&gemm, &exec, verify, &output),
        Command::Plan { gemm, workers, output } => {
            let plan = build_plan(&gemm, resolve_workers(workers)?)?;
            emit(&output, &plan.to_json(), || plan_csv(&plan))
        }
        Command::Model(args) => run_model(&args),
        Command::Fit(args) => run_fit(&args),
    }
}

fn resolve_workers(workers: Option<usize>) -> Result<usize, Failure> {
    let p = match workers {
        Some(p) => p,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    if p == 0 {
        return Err(Failure::Error("worker count must be at least 1".into()));
    }
    Ok(p)
}

fn engine(exec: &ExecArgs) -> Result<Engine, Failure> {
    Ok(Engine::new(EngineConfig::new(resolve_workers(exec.workers)?, exec.mode)))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Error(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            let newline = if text.ends_with('\n') { "" } else { "\n" };
            match write!(stdout, "{text}{newline}").and_then(|()| stdout.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn emit(out: &OutputArgs, json: &str, csv: impl FnOnce() -> Result<String, Failure>) -> Result<(), Failure> {
    let text = match out.format {
        Format::Json => json.to_string(),
        Format::Csv => csv()?,
    };
    write_out(out.out.as_deref(), &text)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn csv_rows<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.to_string())?)?)
}

#[derive(Serialize)]
struct MatrixInfo {
    source: String,
    rows: usize,
    cols: usize,
    nnz: usize,
}

fn load_matrix(m: &MatrixArgs, seed: u64) -> Result<(CsrMatrix, MatrixInfo), Failure> {
    let (csr, source) = match (&m.input, &m.synth) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
            (coo_to_csr(&parse_matrix_market(&text)?)?, path.display().to_string())
        }
        (None, Some(spec)) => (synth_matrix(spec, seed)?, spec.to_string()),
        (None, None) => return Err(Failure::Error("one of --input or --synth is required".into())),
    };
    let info = MatrixInfo {
        source,
        rows: csr.rows,
        cols: csr.cols,
        nnz: csr.nnz(),
    };
    Ok((csr, info))
}

#[derive(Serialize)]
struct Verification {
    max_relative_error: f64,
    tolerance: f64,
    passed: bool,
}

impl Verification {
    fn new(err: f64, tolerance: f64) -> Self {
        Self {
            max_relative_error: err,
            tolerance,
            passed: err <= tolerance,
        }
    }
}

/// Fails with a mismatch once the report has been written.
fn check(v: &Option<Verification>) -> Result<(), Failure> {
    match v {
        Some(v) if !v.passed => Err(Failure::Mismatch(format!(
            "max relative error {:e} exceeds {:e}",
            v.max_relative_error, v.tolerance
        ))),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct SparseReport<'a> {
    command: &'static str,
    matrix: MatrixInfo,
    schedule: ScheduleId,
    grid: GridConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<Verification>,
    report: &'a ExecReport,
}

struct SparseSetup {
    a: CsrMatrix,
    info: MatrixInfo,
    schedule: ScheduleId,
    grid: GridConfig,
    engine: Engine,
}

fn sparse_setup(args: &SparseArgs) -> Result<SparseSetup, Failure> {
    let (a, info) = load_matrix(&args.matrix, args.exec.seed)?;
    let engine = engine(&args.exec)?;
    let schedule = match args.schedule {
        ScheduleChoice::Auto => select_schedule(&a, &SelectorConfig::default()),
        ScheduleChoice::Fixed(id) => id,
    };
    let workers = args.g.unwrap_or(engine.config().hardware_workers);
    Ok(SparseSetup {
        a,
        info,
        schedule,
        grid: GridConfig::grouped(workers, args.group_size),
        engine,
    })
}

fn run_spmv(args: &SparseArgs) -> Result<(), Failure> {
    let s = sparse_setup(args)?;
    let x = DenseMatrix::random(s.a.cols, 1, args.exec.seed.wrapping_add(1)).data;
    let (y, report) = spmv(&s.a, &x, s.schedule, s.grid, &s.engine)?;
    let verify = args.verify.then(|| {
        let err = max_relative_error(&y, &spmv_reference(&s.a, &x), &spmv_scale(&s.a, &x));
        Verification::new(err, SPARSE_TOL)
    });
    let out = SparseReport {
        command: "spmv",
        matrix: s.info,
        schedule: s.schedule,
        grid: s.grid,
        verify,
        report: &report,
    };
    emit(&args.output, &to_json(&out), || Ok(report.to_csv()))?;
    check(&out.verify)
}

fn run_spmm(args: &SparseArgs, cols: usize) -> Result<(), Failure> {
    let s = sparse_setup(args)?;
    let b = DenseMatrix::random(s.a.cols, cols, args.exec.seed.wrapping_add(1));
    let (c, report) = spmm(&s.a, &b, s.schedule, s.grid, &s.engine)?;
    let verify = args.verify.then(|| {
        let err = (0..cols)
            .map(|j| {
                let bj = b.column(j);
                max_relative_error(&c.column(j), &spmv_reference(&s.a, &bj), &spmv_scale(&s.a, &bj))
            })
            .fold(0.0, f64::max);
        Verification::new(err, SPARSE_TOL)
    });
    let out = SparseReport {
        command: "spmm",
        matrix: s.info,
        schedule: s.schedule,
        grid: s.grid,
        verify,
        report: &report,
    };
    emit(&args.output, &to_json(&out), || Ok(report.to_csv()))?;
    check(&out.verify)
}

#[derive(Serialize)]
struct SsspReport<'a> {
    command: &'static str,
    matrix: MatrixInfo,
    schedule: ScheduleId,
    grid: GridConfig,
    source: usize,
    reachable: usize,
    rounds: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<Verification>,
    reports: &'a [ExecReport],
}

#[derive(Serialize)]
struct RoundRow {
    round: usize,
    num_tasks: usize,
    waves: usize,
    utilization: f64,
    imbalance: u64,
    total_work: u64,
}

fn run_sssp(args: &SparseArgs, source: usize) -> Result<(), Failure> {
    let mut s = sparse_setup(args)?;
    for v in &mut s.a.values {
        *v = v.abs();
    }
    let g = Graph::new(s.a)?;
    let result = sssp(&g, source, s.schedule, s.grid, &s.engine)?;
    let verify = args.verify.then(|| {
        let want = sssp_reference(g.adjacency(), source);
        let mismatches = result.dist.iter().zip(&want).filter(|(a, b)| a != b).count();
        Verification {
            max_relative_error: if mismatches == 0 { 0.0 } else { f64::INFINITY },
            tolerance: 0.0,
            passed: mismatches == 0,
        }
    });
    let out = SsspReport {
        command: "sssp",
        matrix: s.info,
        schedule: s.schedule,
        grid: s.grid,
        source,
        reachable: result.dist.iter().filter(|d| d.is_finite()).count(),
        rounds: result.rounds,
        verify,
        reports: &result.reports,
    };
    emit(&args.output, &to_json(&out), || {
        csv_rows(result.reports.iter().enumerate().map(|(round, r)| RoundRow {
            round,
            num_tasks: r.num_tasks,
            waves: r.waves,
            utilization: r.utilization,
            imbalance: r.imbalance,
            total_work: r.total_work,
        }))
    })?;
    check(&out.verify)
}

/// The size parameter of each kind: `--split` for fixed split, `--g` for
/// Stream-K (default `workers`), and `workers` for the hybrids.
fn build_plan(args: &GemmArgs, workers: usize) -> Result<GemmPlan, Failure> {
    let shape = GemmShape::new(args.shape, args.blk)?;
    let param = match args.kind {
        PlanKindId::DataParallel => 0,
        PlanKindId::FixedSplit => args.split,
        PlanKindId::StreamK => args.g.unwrap_or(workers),
        PlanKindId::DpPlusOneTileSk | PlanKindId::TwoTileSkPlusDp => workers,
    };
    Ok(make_plan(shape, args.kind.with_param(param))?)
}

#[derive(Serialize)]
struct RangeRow {
    cta: usize,
    begin: usize,
    end: usize,
    iters: usize,
}

fn plan_csv(plan: &GemmPlan) -> Result<String, Failure> {
    csv_rows(plan.cta_ranges.iter().enumerate().map(|(cta, &(begin, end))| RangeRow {
        cta,
        begin,
        end,
        iters: end - begin,
    }))
}

#[derive(Serialize)]
struct PlanSummary {
    #[serde(flatten)]
    kind: PlanKind,
    grid: usize,
    total_iters: usize,
    partials: usize,
}

#[derive(Serialize)]
struct GemmReport<'a> {
    command: &'static str,
    shape: GemmShape,
    plan: PlanSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<Verification>,
    report: &'a ExecReport,
}

fn run_gemm(args: &GemmArgs, exec: &ExecArgs, verify: bool, output: &OutputArgs) -> Result<(), Failure> {
    let engine = engine(exec)?;
    let plan = build_plan(args, engine.config().hardware_workers)?;
    let s = plan.shape;
    let a = DenseMatrix::random(s.m, s.k, exec.seed);
    let b = DenseMatrix::random(s.k, s.n, exec.seed.wrapping_add(1));
    let (c, report) = execute_plan(&plan, &a, &b, &engine)?;
    let verify = if verify {
        let want = sequential_gemm(&a, &b, &s)?;
        let err = max_relative_error(&c.data, &want.data, &gemm_scale(&a, &b));
        Some(Verification::new(err, GEMM_TOL))
    } else {
        None
    };
    let out = GemmReport {
        command: "gemm",
        shape: s,
        plan: PlanSummary {
            kind: plan.kind,
            grid: plan.grid,
            total_iters: plan.total_iters,
            partials: plan.partials(),
        },
        verify,
        report: &report,
    };
    emit(output, &to_json(&out), || Ok(report.to_csv()))?;
    check(&out.verify)
}

#[derive(Serialize)]
struct ModelRow {
    g: usize,
    iters_per_cta: usize,
    fixup_peers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    cta_time: Option<f64>,
}

#[derive(Serialize)]
struct ModelTable {
    shape: GemmShape,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<ModelParams>,
    rows: Vec<ModelRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    choice: Option<GridChoice>,
}

fn run_model(args: &ModelArgs) -> Result<(), Failure> {
    let shape = GemmShape::new(args.shape, args.blk)?;
    let params = match (&args.params, &args.params_file) {
        (Some([a, b, c, d]), _) => Some(ModelParams::new(*a, *b, *c, *d)?),
        (None, Some(path)) => {
            let key = ParamsKey::new(args.blk, PRECISION, &args.machine);
            let store = ParamsStore::load(path)?;
            Some(store.get(&key).ok_or_else(|| {
                Failure::Error(format!("{}: no parameters for {}", path.display(), key.encode()))
            })?)
        }
        (None, None) => None,
    };
    let grids: Vec<usize> = match args.g {
        Some(0) => return Err(Failure::Error("--g must be at least 1".into())),
        Some(g) => vec![g],
        None => (1..=resolve_workers(args.workers)?).collect(),
    };
    let rows: Vec<ModelRow> = grids
        .iter()
        .map(|&g| ModelRow {
            g,
            iters_per_cta: iters_per_cta(&shape, g),
            fixup_peers: fixup_peers(&shape, g),
            cta_time: params.as_ref().map(|p| cta_time(&shape, g, p)),
        })
        .collect();
    let choice = match (&params, args.g) {
        (Some(p), None) => Some(select_grid_with(&shape, p, grids.len(), args.tie.into())?),
        _ => None,
    };
    let table = ModelTable {
        shape,
        params,
        rows,
        choice,
    };
    emit(&args.output, &to_json(&table), || csv_rows(&table.rows))
}

/// One line of a samples CSV.
#[derive(Deserialize)]
struct SampleRow {
    m: usize,
    n: usize,
    k: usize,
    blk_m: usize,
    blk_n: usize,
    blk_k: usize,
    g: usize,
    time: f64,
}

fn read_samples(path: &Path) -> Result<Vec<Sample>, Failure> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
    reader
        .deserialize::<SampleRow>()
        .map(|row| {
            let r = row?;
            Ok(Sample {
                shape: GemmShape::new([r.m, r.n, r.k], [r.blk_m, r.blk_n, r.blk_k])?,
                g: r.g,
                time: r.time,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct FitReport {
    params: ModelParams,
    samples: Vec<Sample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stored_as: Option<String>,
}

fn run_fit(args: &FitArgs) -> Result<(), Failure> {
    let samples = match (&args.samples, args.shape) {
        (Some(path), _) => read_samples(path)?,
        (None, Some(dims)) => {
            let shape = GemmShape::new(dims, args.blk)?;
            let max_g = args.g.unwrap_or(4 * shape.tiles());
            let grids: Vec<usize> = (1..=max_g).collect();
            measure_samples(shape, &grids, &engine(&args.exec)?, args.exec.seed)?
        }
        (None, None) => return Err(Failure::Error("one of --samples or --shape is required".into())),
    };
    let params = fit_params(&samples)?;
    let stored_as = match &args.store {
        Some(path) => {
            let blk = samples.first().map_or(args.blk, |s| [s.shape.blk_m, s.shape.blk_n, s.shape.blk_k]);
            let key = ParamsKey::new(blk, PRECISION, &args.machine);
            let mut store = ParamsStore::load(path)?;
            store.insert(&key, params);
            store.save(path)?;
            Some(key.encode())
        }
        None => None,
    };
    let report = FitReport {
        params,
        samples,
        stored_as,
    };
    emit(&args.output, &to_json(&report), || csv_rows([params]))
}
