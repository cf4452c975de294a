//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use extragrad::cli::{data_dir, resolve_instance};
use extragrad::dcopf::{interpret_point, output_by_bus, to_problem_spec};
use extragrad::graph::{DirectCommunicator, SpyCommunicator};
use extragrad::oracle::{solve_centralized, OracleSolution};
use extragrad::random::{random_graph, random_instance, RandomParams};
use extragrad::saddle::{local_lagrangian, project};
use extragrad::solver::{run_with, RunTrace, SolverConfig, TraceRow};
use extragrad::{laplacian, run, IterateVector, ProblemSpec, SaddleOperator};

const OBJECTIVE_REL: f64 = 1e-3;
const OBJECTIVE_ABS_FLOOR: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn objective_ok(f: f64, f_star: f64) -> bool {
    (f - f_star).abs() <= (OBJECTIVE_REL * f_star.abs()).max(OBJECTIVE_ABS_FLOOR)
}

fn relative_error(f: f64, f_star: f64) -> f64 {
    (f - f_star).abs() / f_star.abs().max(OBJECTIVE_ABS_FLOOR / OBJECTIVE_REL)
}

fn max_residual(row: &TraceRow) -> f64 {
    [
        row.eq_residual,
        row.ineq_residual,
        row.shared_eq_residual,
        row.shared_ineq_residual,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Solver and oracle results on the random desk-scale family.
struct FamilyRun {
    seed: u64,
    oracle: OracleSolution,
    trace: RunTrace,
}

struct Family {
    runs: Vec<FamilyRun>,
    elapsed: Duration,
}

const FAMILY_SIZE: u64 = 50;
const FAMILY_ITERS: usize = 100_000;

fn family() -> &'static Family {
    static FAMILY: OnceLock<Family> = OnceLock::new();
    FAMILY.get_or_init(|| {
        let start = Instant::now();
        let config = SolverConfig {
            record_every: 1000,
            ..SolverConfig::with_iters(FAMILY_ITERS)
        };
        let runs = (0..FAMILY_SIZE)
            .map(|seed| {
                let spec = random_instance(seed, &RandomParams::default());
                let oracle = solve_centralized(&spec).expect("generated instances are feasible");
                let trace = run(&spec, &config).expect("solver run").trace;
                FamilyRun { seed, oracle, trace }
            })
            .collect();
        Family {
            runs,
            elapsed: start.elapsed(),
        }
    })
}

fn criterion_1() -> Outcome {
    let fam = family();
    let mut failures = Vec::new();
    let (mut worst_rel, mut worst_res) = ((0, 0.0f64), (0, 0.0f64));
    for r in &fam.runs {
        let last = r.trace.last().unwrap();
        let rel = relative_error(last.objective, r.oracle.objective);
        let res = max_residual(last);
        if rel > worst_rel.1 {
            worst_rel = (r.seed, rel);
        }
        if res > worst_res.1 {
            worst_res = (r.seed, res);
        }
        if !objective_ok(last.objective, r.oracle.objective) || res > RESIDUAL_TOL {
            failures.push(r.seed);
        }
    }
    let time_ok = fam.elapsed <= Duration::from_secs(60);
    Outcome::new(
        failures.is_empty() && time_ok,
        format!(
            "{}/{} instances within tolerance at N={FAMILY_ITERS}; worst objective rel {:.2e} (seed {}), \
             worst residual {:.2e} (seed {}); failing seeds {:?}; {:.1}s",
            fam.runs.len() - failures.len(),
            fam.runs.len(),
            worst_rel.1,
            worst_rel.0,
            worst_res.1,
            worst_res.0,
            failures,
            fam.elapsed.as_secs_f64()
        ),
    )
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_2() -> Outcome {
    const SEEDS: std::ops::Range<u64> = 1000..1010;
    const RECORD: usize = 100;
    // log-spaced sample of N over [1e3, 1e5], snapped to recorded iterations
    let grid: Vec<usize> = (0..=20)
        .map(|k| {
            let n = 10f64.powf(3.0 + 0.1 * k as f64);
            ((n / RECORD as f64).round() as usize) * RECORD
        })
        .collect();
    let mut worst_f = f64::NEG_INFINITY;
    let mut worst_c = f64::NEG_INFINITY;
    let mut worst_ratio = 0.0f64;
    let mut failures = Vec::new();
    for seed in SEEDS {
        let spec = random_instance(seed, &RandomParams::default());
        let oracle = solve_centralized(&spec).unwrap();
        let config = SolverConfig {
            record_every: RECORD,
            ..SolverConfig::with_iters(100_000)
        };
        let out = run(&spec, &config).unwrap();
        let l_zeta = out.constants.l_zeta;
        let mut fpts = Vec::new();
        let mut cpts = Vec::new();
        for row in &out.trace.rows {
            if row.iter == 0 {
                continue;
            }
            let fres = (row.objective - oracle.objective).abs();
            worst_ratio = worst_ratio.max(fres / (3.0 * l_zeta / row.iter as f64));
            if grid.contains(&row.iter) {
                fpts.push((row.iter as f64, fres));
                cpts.push((row.iter as f64, row.eq_residual.hypot(row.ineq_residual)));
            }
        }
        let sf = loglog_slope(&fpts);
        let sc = loglog_slope(&cpts);
        worst_f = worst_f.max(sf);
        worst_c = worst_c.max(sc);
        if sf > -0.8 || sc > -0.8 {
            failures.push((seed, (sf * 100.0).round() / 100.0, (sc * 100.0).round() / 100.0));
        }
    }
    let bound_ok = worst_ratio <= 10.0;
    Outcome::new(
        failures.is_empty() && bound_ok,
        format!(
            "max slope: function residual {worst_f:.3}, coupled residual {worst_c:.3}; \
             max |f-f*| / (3 L_zeta / N) = {worst_ratio:.2e}; failing (seed, f slope, c slope) {failures:?}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let fam = family();
    let burn_in = FAMILY_ITERS / 10;
    let mut failures = Vec::new();
    let mut worst_jump = 0.0f64;
    let mut worst_end = 0.0f64;
    for r in &fam.runs {
        let rows: Vec<&TraceRow> = r.trace.rows.iter().filter(|row| row.iter >= burn_in).collect();
        let mut ok = true;
        for w in rows.windows(2) {
            for (prev, next) in [
                (w[0].consensus_dual, w[1].consensus_dual),
                (w[0].consensus_primal, w[1].consensus_primal),
            ] {
                if next > 1.5 * prev {
                    ok = false;
                }
                if prev > 0.0 {
                    worst_jump = worst_jump.max(next / prev);
                }
            }
        }
        let last = r.trace.last().unwrap();
        let end = last.consensus_dual.max(last.consensus_primal);
        worst_end = worst_end.max(end);
        if !ok || end > RESIDUAL_TOL {
            failures.push(r.seed);
        }
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "largest step-to-step ratio after burn-in {worst_jump:.3}; largest final consensus residual \
             {worst_end:.2e}; failing seeds {failures:?}"
        ),
    )
}

fn find_sixbus() -> Option<PathBuf> {
    ["sixbus", "sixbus.json", "sixbus.toml"]
        .iter()
        .map(|n| data_dir().join(n))
        .find(|p| p.is_file())
}

fn dcopf_check(spec: &ProblemSpec, iters: usize) -> (OracleSolution, RunTrace, Vec<f64>) {
    let oracle = solve_centralized(spec).unwrap();
    let config = SolverConfig {
        record_every: 10_000,
        ..SolverConfig::with_iters(iters)
    };
    let out = run(spec, &config).unwrap();
    (oracle, out.trace, out.averages.x)
}

fn criterion_4() -> Outcome {
    const ITERS: usize = 1_000_000;
    let start = Instant::now();
    if let Some(path) = find_sixbus() {
        let resolved = resolve_instance(path.to_str().unwrap(), false).unwrap();
        let inst = resolved.dcopf.expect("sixbus is a dc-opf instance");
        let (oracle, _trace, x) = dcopf_check(&resolved.spec, ITERS);
        let mut ok = true;
        let mut parts = Vec::new();
        for (label, point) in [("oracle", &oracle.x_star), ("solver", &x)] {
            let p = interpret_point(&inst, point).unwrap();
            let outputs: Vec<f64> = output_by_bus(&p).into_values().collect();
            let dispatch_ok = outputs.len() == 2
                && ((outputs[0] - 110.0).abs() <= 1.1)
                && ((outputs[1] - 200.0).abs() <= 2.0);
            let balance_ok = (p.total_generation - p.total_demand).abs() <= 1e-3;
            ok &= dispatch_ok && balance_ok;
            parts.push(format!(
                "{label} dispatch {outputs:?} MW, generation - demand {:.2e}",
                p.total_generation - p.total_demand
            ));
        }
        let elapsed = start.elapsed();
        return Outcome::new(
            ok && elapsed <= Duration::from_secs(120),
            format!("external sixbus: {}; {:.1}s", parts.join("; "), elapsed.as_secs_f64()),
        );
    }

    let resolved = resolve_instance("synthetic6", false).unwrap();
    let inst = resolved.dcopf.clone().unwrap();
    let spec = to_problem_spec(&inst, false).unwrap();
    let (oracle, trace, _) = dcopf_check(&spec, ITERS);
    let last = trace.last().unwrap();
    let rel = relative_error(last.objective, oracle.objective);
    let res = max_residual(last);
    let elapsed = start.elapsed();
    Outcome::new(
        objective_ok(last.objective, oracle.objective) && res <= RESIDUAL_TOL && elapsed <= Duration::from_secs(120),
        format!(
            "external sixbus absent, (110, 200) MW check skipped; synthetic6 at N={ITERS}: objective rel {rel:.2e}, \
             max residual {res:.2e}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..=scale)).collect()
}

fn random_iterate(spec: &ProblemSpec, rng: &mut ChaCha8Rng, scale: f64) -> IterateVector {
    let mut zeta = IterateVector::initial(spec);
    for f in zeta.fields_mut() {
        let len = f.len();
        *f = random_vec(rng, len, scale);
    }
    zeta
}

fn diff(a: &IterateVector, b: &IterateVector) -> IterateVector {
    let mut d = a.clone();
    for (d, b) in d.fields_mut().into_iter().zip(b.fields()) {
        d.iter_mut().zip(b.iter()).for_each(|(d, b)| *d -= b);
    }
    d
}

/// `Σ_k g^k + ⟨z, W y⟩ + ⟨z̃, W̃ x̃⟩`, whose signed partial gradients are the
/// operator's blocks.
fn potential(spec: &ProblemSpec, w: &DMatrix<f64>, zeta: &IterateVector) -> f64 {
    let mut total = 0.0;
    for k in 0..spec.agent_count() {
        total += local_lagrangian(
            spec,
            k,
            zeta.x_block(k),
            zeta.xt_block(k),
            zeta.y_block(k),
            zeta.yt_block(k),
        )
        .unwrap();
    }
    let kron = |d: usize| w.kronecker(&DMatrix::identity(d, d));
    let dy = spec.m + spec.h;
    let nt = spec.shared_dim();
    let wy = kron(dy) * DVector::from_column_slice(&zeta.y);
    let wxt = kron(nt) * DVector::from_column_slice(&zeta.xt);
    total + DVector::from_column_slice(&zeta.z).dot(&wy) + DVector::from_column_slice(&zeta.zt).dot(&wxt)
}

fn criterion_5() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // kernel of the lifted Laplacian and agreement with dense Kronecker assembly
    let mut kernel_worst = 0.0f64;
    let mut kron_worst = 0.0f64;
    for _ in 0..100 {
        let nodes = rng.random_range(2..=12);
        let edge_prob = rng.random_range(0.0..0.6);
        let graph = random_graph(&mut rng, nodes, edge_prob);
        let d = rng.random_range(1..=4);
        let w = laplacian(&graph).unwrap().lift(d);
        let block = random_vec(&mut rng, d, 5.0);
        let constant: Vec<f64> = (0..nodes).flat_map(|_| block.iter().copied()).collect();
        let scale = block.iter().fold(0.0f64, |m, v| m.max(v.abs())) * graph.node_count() as f64;
        let out = w.lifted_matvec(&constant).unwrap();
        kernel_worst = kernel_worst.max(out.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);

        let v = random_vec(&mut rng, nodes * d, 5.0);
        let dense = w.base().kronecker(&DMatrix::identity(d, d)) * DVector::from_column_slice(&v);
        let got = DVector::from_vec(w.lifted_matvec(&v).unwrap());
        kron_worst = kron_worst.max((got - &dense).norm() / dense.norm().max(f64::MIN_POSITIVE));
    }
    ok &= kernel_worst <= 1e-15 && kron_worst <= 1e-12;
    notes.push(format!("kernel {kernel_worst:.1e}, kronecker rel {kron_worst:.1e}"));

    let specs: Vec<ProblemSpec> = (0..20).map(|s| random_instance(500 + s, &RandomParams::default())).collect();

    // projection: idempotent and nonexpansive
    let mut proj_ok = true;
    for i in 0..10_000 {
        let spec = &specs[i % specs.len()];
        let u = random_iterate(spec, &mut rng, 10.0);
        let v = random_iterate(spec, &mut rng, 10.0);
        let (pu, pv) = (project(spec, &u).unwrap(), project(spec, &v).unwrap());
        proj_ok &= project(spec, &pu).unwrap() == pu;
        proj_ok &= pu.distance(&pv) <= u.distance(&v) * (1.0 + 1e-15);
    }
    ok &= proj_ok;
    notes.push(format!("projection {}", if proj_ok { "ok" } else { "violated" }));

    // monotonicity on feasible pairs
    let mut mono_worst = f64::INFINITY;
    for i in 0..1000 {
        let spec = &specs[i % specs.len()];
        let op = SaddleOperator::new(spec).unwrap();
        let u = project(spec, &random_iterate(spec, &mut rng, 3.0)).unwrap();
        let v = project(spec, &random_iterate(spec, &mut rng, 3.0)).unwrap();
        let fu = op.eval(&DirectCommunicator, &u).unwrap();
        let fv = op.eval(&DirectCommunicator, &v).unwrap();
        mono_worst = mono_worst.min(diff(&fu, &fv).dot(&diff(&u, &v)));
    }
    ok &= mono_worst >= -1e-9;
    notes.push(format!("min <F(u)-F(v), u-v> {mono_worst:.3e}"));

    // every operator block against central differences of the potential
    let mut fd_worst = 0.0f64;
    for spec in &specs {
        let op = SaddleOperator::new(spec).unwrap();
        let w = laplacian(&spec.graph).unwrap().base().clone();
        let zeta = random_iterate(spec, &mut rng, 2.0);
        let field = op.eval(&DirectCommunicator, &zeta).unwrap();
        let mut fd = IterateVector::zeros(zeta.layout());
        // the min-side blocks (x, x̃, z) descend, the max-side blocks ascend
        let signs = [1.0, 1.0, -1.0, -1.0, 1.0, -1.0];
        for (b, sign) in signs.iter().enumerate() {
            for i in 0..zeta.fields()[b].len() {
                let base = zeta.fields()[b][i];
                let step = 1e-6 * base.abs().max(1.0);
                let mut plus = zeta.clone();
                plus.fields_mut()[b][i] = base + step;
                let mut minus = zeta.clone();
                minus.fields_mut()[b][i] = base - step;
                fd.fields_mut()[b][i] =
                    sign * (potential(spec, &w, &plus) - potential(spec, &w, &minus)) / (2.0 * step);
            }
        }
        fd_worst = fd_worst.max(diff(&fd, &field).norm() / field.norm());
    }
    ok &= fd_worst <= 1e-5;
    notes.push(format!("finite differences rel {fd_worst:.1e}"));

    Outcome::new(ok, notes.join("; "))
}

fn criterion_6() -> Outcome {
    const ITERS: usize = 200;
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..5u64 {
        let params = RandomParams {
            agents: (3, 8),
            shared_dim: (1, 2),
            edge_prob: 0.2 + 0.1 * seed as f64,
            ..RandomParams::default()
        };
        let spec = random_instance(7000 + seed, &params);
        let spy = SpyCommunicator::new();
        run_with(&spec, &SolverConfig::with_iters(ITERS), None, &spy).unwrap();
        let per_iter = spy.applications() as f64 / ITERS as f64;
        ok &= spy.applications() == 8 * ITERS && spy.nonlocal_reads() == 0 && spy.reads() > 0;
        notes.push(format!(
            "l={} |E|={}: {per_iter} applications/iter, {} nonlocal reads",
            spec.agent_count(),
            spec.graph.edge_count(),
            spy.nonlocal_reads()
        ));
    }
    Outcome::new(ok, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(std::thread::available_parallelism().map_or(8, |n| n.get()).max(8))
        .build()
        .unwrap();
    let mut ok = true;
    for seed in 0..5u64 {
        let spec = random_instance(9000 + seed, &RandomParams::default());
        let config = SolverConfig {
            random_init: true,
            seed,
            record_every: 50,
            ..SolverConfig::with_iters(5000)
        };
        let write = |name: &str, parallel: bool| -> Vec<u8> {
            let cfg = SolverConfig { parallel, ..config.clone() };
            let out = if parallel {
                pool.install(|| run(&spec, &cfg)).unwrap()
            } else {
                run(&spec, &cfg).unwrap()
            };
            let path = dir.path().join(format!("{seed}-{name}.csv"));
            out.trace.write_csv(fs::File::create(&path).unwrap()).unwrap();
            fs::read(&path).unwrap()
        };
        let a = write("a", false);
        let b = write("b", false);
        let c = write("c", true);
        ok &= a == b && a == c;
    }
    Outcome::new(
        ok,
        format!(
            "5 instances, sequential twice and on a {}-thread pool: traces {}",
            pool.current_num_threads(),
            if ok { "byte-identical" } else { "differ" }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("1 oracle equivalence", criterion_1),
        ("2 empirical O(1/N) rate", criterion_2),
        ("3 consensus decay", criterion_3),
        ("4 dc-opf reproduction", criterion_4),
        ("5 structural invariants", criterion_5),
        ("6 communication locality", criterion_6),
        ("7 determinism", criterion_7),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let out = check();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        if !out.pass {
            failed += 1;
        }
        println!("{tag} criterion {name}: {}", out.detail);
    }
    println!("acceptance: {} passed, {failed} failed", 7 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
