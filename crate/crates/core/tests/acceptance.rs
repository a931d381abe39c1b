//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Each criterion also has a wall-clock bound.

use lbwork::apps::{select_schedule_dims, spmm, spmv, sssp, Graph, SelectorConfig};
use lbwork::balance::{balanced_partition, merge_path_search, prefix_sum, quantization_efficiency, MergePathPoint};
use lbwork::engine::{Engine, EngineConfig, ExecMode};
use lbwork::formats::{coo_to_csr, synth_matrix, CooMatrix, CountsTileSet, DenseMatrix, SynthSpec, TileSetView};
use lbwork::model::{cta_time, fixup_peers, iters_per_cta, select_grid, ModelParams};
use lbwork::schedules::{build_schedule, GridConfig, ScheduleId};
use lbwork::streamk::{execute_plan, make_plan, sequential_gemm, GemmShape, PlanKind};
use lbwork::verify::{gemm_scale, max_relative_error, spmv_reference, spmv_scale};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

type Outcome = Result<(), String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Stands in for an 8-SM machine regardless of host core count.
const HW_WORKERS: usize = 8;

fn engine(mode: ExecMode) -> Engine {
    Engine::new(EngineConfig::new(HW_WORKERS, mode))
}

fn shape(dims: [usize; 3], blk: [usize; 3]) -> GemmShape {
    GemmShape::new(dims, blk).expect("valid shape")
}

fn c1_quantization() -> Outcome {
    ensure(quantization_efficiency(9, 4) == Ok(0.75), || "9 tiles on 4 SMs".into())?;
    ensure(quantization_efficiency(18, 4) == Ok(0.9), || "18 tiles on 4 SMs".into())?;
    let fs = make_plan(shape([384, 384, 128], [128, 128, 64]), PlanKind::FixedSplit { s: 2 }).unwrap();
    ensure(fs.grid == 18, || format!("fixed split grid {}", fs.grid))?;
    let sk = make_plan(shape([384, 384, 128], [128, 128, 4]), PlanKind::StreamK { g: 4 }).unwrap();
    ensure(sk.total_iters == 288, || format!("total iters {}", sk.total_iters))?;
    ensure((0..4).all(|c| sk.iters_of(c) == 72), || format!("ranges {:?}", sk.cta_ranges))
}

fn c2_model_arithmetic() -> Outcome {
    let cases = [
        ([256, 3584, 8192], 108, 133, 2),
        ([128, 128, 16384], 8, 64, 8),
        ([1024, 1024, 1024], 64, 32, 1),
    ];
    for (dims, g, ipc, peers) in cases {
        let s = shape(dims, [128, 128, 32]);
        let got = (iters_per_cta(&s, g), fixup_peers(&s, g));
        ensure(got == (ipc, peers), || format!("{dims:?} g={g}: got {got:?}, want {:?}", (ipc, peers)))?;
    }
    Ok(())
}

fn random_shape(rng: &mut ChaCha8Rng, max_dim: usize) -> GemmShape {
    let blk = [8, 16, 32, 48, 64, 100];
    shape(
        [rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim)],
        [blk[rng.gen_range(0..6)], blk[rng.gen_range(0..6)], rng.gen_range(1..=40)],
    )
}

fn c3_generalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fixed_split_cases = 0;
    for _ in 0..200 {
        let s = random_shape(&mut rng, 2048);
        let dp = make_plan(s, PlanKind::DataParallel).unwrap();
        let sk = make_plan(s, PlanKind::StreamK { g: s.tiles() }).unwrap();
        ensure(sk.cta_ranges == dp.cta_ranges, || format!("{s:?}: stream_k(g=tiles) differs from data_parallel"))?;
        for split in 1..=8 {
            if !s.iters_per_tile().is_multiple_of(split) {
                continue;
            }
            fixed_split_cases += 1;
            let fs = make_plan(s, PlanKind::FixedSplit { s: split }).unwrap();
            let sk = make_plan(s, PlanKind::StreamK { g: split * s.tiles() }).unwrap();
            ensure(sk.cta_ranges == fs.cta_ranges, || format!("{s:?}: stream_k(g={split}*tiles) differs from fixed_split"))?;
        }
    }
    ensure(fixed_split_cases >= 200, || format!("only {fixed_split_cases} fixed-split comparisons"))
}

fn c4_gemm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eng = engine(ExecMode::Phased);
    for case in 0..50 {
        let s = random_shape(&mut rng, 512);
        let integer = case % 5 == 0;
        let (a, b) = if integer {
            (DenseMatrix::random_int(s.m, s.k, 8, case), DenseMatrix::random_int(s.k, s.n, 8, case + 1000))
        } else {
            (DenseMatrix::random(s.m, s.k, case), DenseMatrix::random(s.k, s.n, case + 1000))
        };
        let want = sequential_gemm(&a, &b, &s).unwrap();
        let scale = gemm_scale(&a, &b);
        let kinds = [
            PlanKind::DataParallel,
            PlanKind::FixedSplit { s: rng.gen_range(1..=6) },
            PlanKind::StreamK { g: rng.gen_range(1..=2 * s.tiles() + 8) },
            PlanKind::DpPlusOneTileSk { p: rng.gen_range(1..=16) },
            PlanKind::TwoTileSkPlusDp { p: rng.gen_range(1..=16) },
        ];
        for kind in kinds {
            let plan = make_plan(s, kind).unwrap();
            let (c, report) = execute_plan(&plan, &a, &b, &eng).map_err(|e| e.to_string())?;
            ensure(report.total_work == s.total_iters() as u64, || format!("{kind:?}: work not conserved"))?;
            if integer {
                ensure(c == want, || format!("case {case} {s:?} {kind:?}: integer result differs"))?;
            } else {
                let err = max_relative_error(&c.data, &want.data, &scale);
                ensure(err <= 1e-12, || format!("case {case} {s:?} {kind:?}: relative error {err:e}"))?;
            }
        }
    }
    Ok(())
}

fn c5_sparse_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eng = engine(ExecMode::Concurrent);
    let mut max_nnz = 0;
    for case in 0..50u64 {
        let spec = match case % 5 {
            0 => SynthSpec::uniform(10_000, 10_000, 10),
            1 => SynthSpec::power_law(20_000, 20_000, 1.8, 2000),
            2 => SynthSpec::uniform(rng.gen_range(1..3000), rng.gen_range(20..3000), rng.gen_range(0..20)),
            _ => SynthSpec::power_law(
                rng.gen_range(1..8000),
                rng.gen_range(1..8000),
                rng.gen_range(1.3..3.0),
                rng.gen_range(1..4000),
            ),
        };
        let a = synth_matrix(&spec, case).map_err(|e| e.to_string())?;
        max_nnz = max_nnz.max(a.nnz());
        let x = DenseMatrix::random(a.cols, 1, case + 77).data;
        let want = spmv_reference(&a, &x);
        let scale = spmv_scale(&a, &x);
        let grid = GridConfig::grouped(rng.gen_range(1..=64), [1, 4, 32][rng.gen_range(0..3)]);
        for id in ScheduleId::ALL {
            let (y, report) = spmv(&a, &x, id, grid, &eng).map_err(|e| e.to_string())?;
            let err = max_relative_error(&y, &want, &scale);
            ensure(err <= 1e-10, || format!("{spec} {id}: spmv relative error {err:e}"))?;
            ensure(report.total_work == a.nnz() as u64, || format!("{spec} {id}: work not conserved"))?;
        }
        if case % 10 == 3 {
            let b = DenseMatrix::random(a.cols, 3, case + 99);
            for id in ScheduleId::ALL {
                let (c, _) = spmm(&a, &b, id, grid, &eng).map_err(|e| e.to_string())?;
                for col in 0..3 {
                    let bc = b.column(col);
                    let got = c.column(col);
                    let err = max_relative_error(&got, &spmv_reference(&a, &bc), &spmv_scale(&a, &bc));
                    ensure(err <= 1e-10, || format!("{spec} {id}: spmm column {col} error {err:e}"))?;
                }
            }
        }
    }
    ensure(max_nnz >= 100_000, || format!("largest matrix only has {max_nnz} nonzeros"))
}

/// Sequential two-pointer merge, one point per diagonal. Row ends win ties
/// against nonzeros.
fn two_pointer_path(offsets: &[usize]) -> Vec<MergePathPoint> {
    let rows = offsets.len() - 1;
    let nnz = offsets[rows];
    let (mut i, mut j) = (0, 0);
    let mut path = vec![MergePathPoint { row: 0, nz: 0 }];
    for _ in 0..rows + nnz {
        if i < rows && (j >= nnz || offsets[i + 1] <= j) {
            i += 1;
        } else {
            j += 1;
        }
        path.push(MergePathPoint { row: i, nz: j });
    }
    path
}

fn random_counts(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let tiles = rng.gen_range(0..200);
    let heavy = rng.gen_bool(0.3);
    (0..tiles)
        .map(|_| {
            if heavy && rng.gen_bool(0.05) {
                rng.gen_range(0..3000)
            } else {
                rng.gen_range(0..12)
            }
        })
        .collect()
}

fn c6_even_share_and_coverage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let total = rng.gen_range(0..1_000_000);
        let workers = rng.gen_range(1..5000);
        let lens = balanced_partition(total, workers).unwrap().lengths();
        let (lo, hi) = (*lens.iter().min().unwrap(), *lens.iter().max().unwrap());
        ensure(hi - lo <= 1 && lens.iter().sum::<usize>() == total, || format!("partition {total}/{workers}"))?;
    }
    for case in 0..1000 {
        let counts = random_counts(&mut rng);
        let ts = CountsTileSet::new(&counts);
        let grid = GridConfig::grouped(rng.gen_range(1..100), rng.gen_range(1..40));
        for id in ScheduleId::ALL {
            let a = build_schedule(id, &ts, grid).unwrap();
            let mut seen = vec![0u32; ts.num_atoms()];
            let mut outside = false;
            a.visit_pairs(|_, tile, atom| {
                outside |= !ts.tile_atom_range(tile).contains(&atom);
                seen[atom] += 1;
            });
            ensure(!outside && seen.iter().all(|&c| c == 1), || format!("case {case} {id}: atoms not covered exactly once"))?;
            let mut writers = vec![0u32; ts.num_tiles()];
            for w in &a.workers {
                for s in w.spans().filter(|s| s.writes_tile()) {
                    writers[s.tile] += 1;
                }
            }
            for t in 0..ts.num_tiles() {
                let ok = if counts[t] > 0 { writers[t] == 1 } else { writers[t] <= 1 };
                ensure(ok, || format!("case {case} {id}: tile {t} written {} times", writers[t]))?;
            }
        }
    }
    for case in 0..1000 {
        let counts = random_counts(&mut rng);
        let mut offsets = vec![0];
        offsets.extend(prefix_sum(&counts));
        let rows = counts.len();
        let nnz = offsets[rows];
        let oracle = two_pointer_path(&offsets);
        let mut prev = MergePathPoint { row: 0, nz: 0 };
        for (d, want) in oracle.into_iter().enumerate() {
            let p = merge_path_search(d, &offsets, nnz).unwrap();
            ensure(p == want, || format!("case {case} diagonal {d}: {p:?}, two-pointer {want:?}"))?;
            ensure(p.row >= prev.row && p.nz >= prev.nz && p.row + p.nz == d, || format!("case {case}: staircase broken at {d}"))?;
            prev = p;
        }
    }
    Ok(())
}

fn c7_model_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let s = shape(
            [rng.gen_range(1..20_000), rng.gen_range(1..20_000), rng.gen_range(1..50_000)],
            [16 << rng.gen_range(0..4), 16 << rng.gen_range(0..4), 8 << rng.gen_range(0..3)],
        );
        let mut prev = (iters_per_cta(&s, 1), fixup_peers(&s, 1));
        for g in 2..=4096 {
            let cur = (iters_per_cta(&s, g), fixup_peers(&s, g));
            ensure(cur.0 <= prev.0 && cur.1 >= prev.1, || format!("{s:?}: not monotone at g={g}"))?;
            prev = cur;
        }
    }
    let c_only = ModelParams::new(0.0, 0.0, 1.0, 0.0).unwrap();
    for p in [1, 4, 108] {
        let s = shape([1024, 1024, 1024], [128, 128, 32]);
        let g = select_grid(&s, &c_only, p).unwrap().g_best;
        ensure(g == p, || format!("c-only model picked g={g} on p={p}"))?;
    }
    let single_tile = shape([128, 128, 4096], [128, 128, 32]);
    let d_heavy = ModelParams::new(1.0, 0.0, 1.0, 1e6).unwrap();
    let g = select_grid(&single_tile, &d_heavy, 108).unwrap().g_best;
    ensure(g == 1, || format!("d-dominated model picked g={g}"))?;
    ensure(cta_time(&single_tile, 1, &d_heavy) == 129.0, || "single-CTA time".into())
}

fn c8_mode_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let concurrent = engine(ExecMode::Concurrent);
    let phased = engine(ExecMode::Phased);
    for case in 0..100u64 {
        let s = random_shape(&mut rng, 160);
        let g = rng.gen_range(1..=HW_WORKERS);
        let plan = make_plan(s, PlanKind::StreamK { g }).unwrap();
        let a = DenseMatrix::random_int(s.m, s.k, 6, case);
        let b = DenseMatrix::random_int(s.k, s.n, 6, case + 500);
        let (c1, r1) = execute_plan(&plan, &a, &b, &concurrent).map_err(|e| e.to_string())?;
        let (c2, r2) = execute_plan(&plan, &a, &b, &phased).map_err(|e| e.to_string())?;
        let bitwise = c1.data.iter().zip(&c2.data).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(bitwise, || format!("case {case} {s:?} g={g}: modes differ"))?;
        ensure(r1.tasks == r2.tasks, || format!("case {case}: per-CTA counters differ"))?;
        ensure(r1.partials_written == plan.partials() as u64, || format!("case {case}: partial count"))?;
    }
    Ok(())
}

#[derive(PartialEq)]
struct Entry(f64, usize);
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn dijkstra(g: &Graph, source: usize) -> Vec<f64> {
    let adj = g.adjacency();
    let mut dist = vec![f64::INFINITY; g.vertices()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::from([Entry(0.0, source)]);
    while let Some(Entry(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for e in adj.row_range(v) {
            let nd = d + adj.values[e];
            let nb = adj.indices[e];
            if nd < dist[nb] {
                dist[nb] = nd;
                heap.push(Entry(nd, nb));
            }
        }
    }
    dist
}

fn c9_sssp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let eng = engine(ExecMode::Concurrent);
    let schedules = [ScheduleId::ThreadMapped, ScheduleId::MergePath, ScheduleId::BinningLrb];
    for case in 0..100 {
        let n = rng.gen_range(1..=500);
        let m = rng.gen_range(0..=n * 6);
        let mut cells = BTreeSet::new();
        for _ in 0..m {
            cells.insert((rng.gen_range(0..n), rng.gen_range(0..n)));
        }
        let entries = cells
            .into_iter()
            .map(|(u, v)| {
                let w = match rng.gen_range(0..10) {
                    0 => 0.0,
                    1..=4 => f64::from(rng.gen_range(1..20)),
                    _ => rng.gen_range(0.0..10.0),
                };
                (u, v, w)
            })
            .collect();
        let g = Graph::new(coo_to_csr(&CooMatrix::new(n, n, entries).unwrap()).unwrap()).unwrap();
        let source = rng.gen_range(0..n);
        let want = dijkstra(&g, source);
        let grid = GridConfig::grouped(rng.gen_range(1..40), 8);
        for id in schedules {
            let got = sssp(&g, source, id, grid, &eng).map_err(|e| e.to_string())?;
            ensure(got.dist == want, || format!("case {case} n={n} {id}: distances differ from Dijkstra"))?;
        }
    }
    Ok(())
}

fn c10_selector() -> Outcome {
    let cfg = SelectorConfig::default();
    let cases = [
        ((300, 300, 5000), ScheduleId::ThreadMapped),
        ((10_000, 10_000, 1_000_000), ScheduleId::MergePath),
        ((300, 300, 50_000), ScheduleId::MergePath),
    ];
    for ((r, c, nnz), want) in cases {
        let got = select_schedule_dims(r, c, nnz, &cfg);
        ensure(got == want, || format!("{r}x{c} nnz={nnz}: got {got}, want {want}"))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("quantization figures", Duration::from_secs(1), c1_quantization),
        ("model figure arithmetic", Duration::from_secs(1), c2_model_arithmetic),
        ("generalization equivalences", Duration::from_secs(10), c3_generalization),
        ("GEMM oracle suite", Duration::from_secs(60), c4_gemm_oracle),
        ("SpMV/SpMM oracle suite", Duration::from_secs(60), c5_sparse_oracle),
        ("even share and coverage", Duration::from_secs(120), c6_even_share_and_coverage),
        ("model properties", Duration::from_secs(10), c7_model_properties),
        ("engine mode equivalence", Duration::from_secs(60), c8_mode_equivalence),
        ("SSSP oracle", Duration::from_secs(30), c9_sssp_oracle),
        ("heuristic selector", Duration::from_secs(1), c10_selector),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|()| {
            ensure(elapsed <= *limit, || format!("took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))
        });
        match outcome {
            Ok(()) => println!("criterion {:>2} {name}: PASS ({:.2} s)", i + 1, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({:.2} s): {msg}", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
