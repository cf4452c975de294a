//! Decentralized extragradient iteration.
//!
//! Every iteration performs two communication rounds (four lifted products
//! each) and two agent-local projected steps:
//!
//! ```text
//!   ζ_{i+½} = proj(ζ_i − h F(ζ_i))
//!   ζ_{i+1} = proj(ζ_i − h F(ζ_{i+½}))
//! ```
//!
//! The returned solution is the ergodic mean of the half-iterates.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense;
use crate::error::{Error, Result};
use crate::graph::{Communicator, DirectCommunicator, ParallelCommunicator};
use crate::problem::{centralized_objective, coupled_residuals, ProblemSpec};
use crate::saddle::{
    compute_constants, local_lagrangian, weighted_norm, Exchanged, IterateVector, Layout,
    ProblemConstants, SaddleOperator,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `1 / operator_lipschitz` from [`compute_constants`].
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub step: StepSize,
    pub record_every: usize,
    /// Stop once the combined residual of the running average drops to this
    /// value; `0` runs all iterations.
    pub tolerance: f64,
    pub seed: u64,
    /// Draw `x₀` uniformly in the boxes instead of using box midpoints.
    pub random_init: bool,
    /// On non-finite values, halve the step and restart instead of failing.
    pub adaptive_halving: bool,
    /// Run agent-local updates and neighbor exchanges on the rayon pool.
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100_000,
            step: StepSize::Auto,
            record_every: 100,
            tolerance: 0.0,
            seed: 0,
            random_init: false,
            adaptive_halving: false,
            parallel: false,
        }
    }
}

impl SolverConfig {
    pub fn with_iters(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }
}

/// Reference primal point used for the duality-gap surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparator {
    pub x: Vec<f64>,
    pub xt: Vec<f64>,
    pub objective: f64,
}

/// Monitored quantities at one recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub eq_residual: f64,
    pub ineq_residual: f64,
    pub shared_eq_residual: f64,
    pub shared_ineq_residual: f64,
    pub consensus_dual: f64,
    pub consensus_primal: f64,
    pub xt_disagreement: f64,
    pub gap_surrogate: f64,
}

pub const TRACE_COLUMNS: [&str; 10] = [
    "iter",
    "objective",
    "eq_residual",
    "ineq_residual",
    "shared_eq_residual",
    "shared_ineq_residual",
    "consensus_dual",
    "consensus_primal",
    "xt_disagreement",
    "gap_surrogate",
];

impl TraceRow {
    /// Sum of all constraint and consensus residuals.
    pub fn combined_residual(&self) -> f64 {
        self.eq_residual
            + self.ineq_residual
            + self.shared_eq_residual
            + self.shared_ineq_residual
            + self.consensus_dual
            + self.consensus_primal
    }

    /// The nine value columns after `iter`, in trace order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.objective,
            self.eq_residual,
            self.ineq_residual,
            self.shared_eq_residual,
            self.shared_ineq_residual,
            self.consensus_dual,
            self.consensus_primal,
            self.xt_disagreement,
            self.gap_surrogate,
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Comma-separated table with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = TRACE_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            write!(out, "{}", r.iter).unwrap();
            for v in r.values() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trace".into()))??;
        if header.trim_end() != TRACE_COLUMNS.join(",") {
            return Err(Error::Parse(format!("unexpected trace header: {header}")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.trim_end().split(',').collect();
            if cells.len() != TRACE_COLUMNS.len() {
                return Err(Error::Parse(format!(
                    "trace row {} has {} columns",
                    lineno + 1,
                    cells.len()
                )));
            }
            let bad = |c: &str| Error::Parse(format!("trace row {}: bad value {c:?}", lineno + 1));
            let iter = cells[0].parse().map_err(|_| bad(cells[0]))?;
            let mut v = [0.0; 9];
            for (slot, c) in v.iter_mut().zip(&cells[1..]) {
                *slot = c.parse().map_err(|_| bad(c))?;
            }
            if rows.last().is_some_and(|p: &TraceRow| p.iter >= iter) {
                return Err(Error::Parse("trace iterations not increasing".into()));
            }
            rows.push(TraceRow {
                iter,
                objective: v[0],
                eq_residual: v[1],
                ineq_residual: v[2],
                shared_eq_residual: v[3],
                shared_ineq_residual: v[4],
                consensus_dual: v[5],
                consensus_primal: v[6],
                xt_disagreement: v[7],
                gap_surrogate: v[8],
            });
        }
        Ok(Self { rows })
    }
}

/// Theoretical bounds at the final iteration count. Constraint bounds are
/// given as printed (multiplying by the spectral quantity) and with the
/// spectral quantity in the denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub iterations: usize,
    /// `3 L_ζ / N`
    pub fn_residual_bound: f64,
    /// `L_ζ ‖ζ* − ζ₀‖² / (2N)`, only with a comparator.
    pub gap_bound: Option<f64>,
    pub coupled_printed: f64,
    pub coupled_divided: f64,
    pub shared_printed: f64,
    pub shared_divided: f64,
    pub consensus_dual_printed: f64,
    pub consensus_dual_divided: f64,
    pub consensus_primal_printed: f64,
    pub consensus_primal_divided: f64,
}

impl BoundReport {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("fn_residual_bound", self.fn_residual_bound),
            ("gap_bound", self.gap_bound.unwrap_or(f64::NAN)),
            ("coupled_bound_printed", self.coupled_printed),
            ("coupled_bound_divided", self.coupled_divided),
            ("shared_bound_printed", self.shared_printed),
            ("shared_bound_divided", self.shared_divided),
            ("consensus_dual_bound_printed", self.consensus_dual_printed),
            ("consensus_dual_bound_divided", self.consensus_dual_divided),
            ("consensus_primal_bound_printed", self.consensus_primal_printed),
            ("consensus_primal_bound_divided", self.consensus_primal_divided),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SolverOutput {
    /// Ergodic mean of the half-iterates.
    pub averages: IterateVector,
    pub last: IterateVector,
    pub trace: RunTrace,
    pub constants: ProblemConstants,
    pub bound_report: BoundReport,
    /// Step actually used (after any halving).
    pub step_size: f64,
    pub iterations: usize,
}

/// Compensated running sum of iterates.
#[derive(Debug, Clone)]
struct ErgodicSum {
    sum: IterateVector,
    comp: IterateVector,
}

impl ErgodicSum {
    fn new(layout: &Layout) -> Self {
        Self {
            sum: IterateVector::zeros(layout),
            comp: IterateVector::zeros(layout),
        }
    }

    fn add(&mut self, v: &IterateVector) {
        for ((s, c), x) in self
            .sum
            .fields_mut()
            .into_iter()
            .zip(self.comp.fields_mut())
            .zip(v.fields())
        {
            for ((s, c), &x) in s.iter_mut().zip(c.iter_mut()).zip(x.iter()) {
                dense::neumaier_add(s, c, x);
            }
        }
    }

    fn mean(&self, count: usize) -> IterateVector {
        let mut out = self.sum.clone();
        let inv = 1.0 / count as f64;
        for (o, c) in out.fields_mut().into_iter().zip(self.comp.fields()) {
            for (o, c) in o.iter_mut().zip(c.iter()) {
                *o = (*o + c) * inv;
            }
        }
        out
    }
}

/// Reusable buffers for extragradient steps.
pub struct Stepper<'a, C: Communicator + ?Sized> {
    op: &'a SaddleOperator,
    comm: &'a C,
    ex: Exchanged,
    parallel: bool,
}

impl<'a, C: Communicator + ?Sized> Stepper<'a, C> {
    pub fn new(op: &'a SaddleOperator, comm: &'a C, parallel: bool) -> Self {
        Self {
            op,
            comm,
            ex: Exchanged::zeros(op.layout()),
            parallel,
        }
    }

    /// One extragradient round from `zeta` into `half` and `next`.
    pub fn step(&mut self, zeta: &IterateVector, h: f64, half: &mut IterateVector, next: &mut IterateVector) {
        self.op.exchange(self.comm, zeta, &mut self.ex);
        self.op.local_update(zeta, zeta, &self.ex, h, true, half, self.parallel);
        self.op.exchange(self.comm, half, &mut self.ex);
        self.op.local_update(zeta, half, &self.ex, h, true, next, self.parallel);
    }
}

/// One extragradient round: returns `(ζ_{i+½}, ζ_{i+1})`.
pub fn iterate_once(
    op: &SaddleOperator,
    zeta: &IterateVector,
    h: f64,
) -> Result<(IterateVector, IterateVector)> {
    if zeta.layout() != op.layout() {
        return Err(Error::dim("iterate layout", op.layout().agents(), zeta.layout().agents()));
    }
    let mut half = IterateVector::zeros(op.layout());
    let mut next = IterateVector::zeros(op.layout());
    Stepper::new(op, &DirectCommunicator, false).step(zeta, h, &mut half, &mut next);
    if !half.is_finite() || !next.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            step: h,
        });
    }
    Ok((half, next))
}

/// Starting point: box midpoints (or a seeded uniform draw), zero multipliers.
pub fn initial_point(spec: &ProblemSpec, config: &SolverConfig) -> IterateVector {
    let mut zeta = IterateVector::initial(spec);
    if config.random_init {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        zeta.x = spec
            .agents
            .iter()
            .flat_map(|a| a.bounds.lower().iter().zip(a.bounds.upper()))
            .map(|(&l, &u)| draw(l, u))
            .collect();
        let b = &spec.shared.bounds;
        let xt: Vec<f64> = b.lower().iter().zip(b.upper()).map(|(&l, &u)| draw(l, u)).collect();
        zeta.xt = (0..spec.agent_count()).flat_map(|_| xt.iter().copied()).collect();
    }
    zeta
}

pub fn run(spec: &ProblemSpec, config: &SolverConfig) -> Result<SolverOutput> {
    if config.parallel {
        run_with(spec, config, None, &ParallelCommunicator)
    } else {
        run_with(spec, config, None, &DirectCommunicator)
    }
}

/// Full run with an optional comparator for the gap surrogate and an explicit
/// communicator (e.g. an instrumented one).
pub fn run_with<C: Communicator + ?Sized>(
    spec: &ProblemSpec,
    config: &SolverConfig,
    reference: Option<&Comparator>,
    comm: &C,
) -> Result<SolverOutput> {
    let report = crate::problem::validate(spec);
    if !report.is_empty() {
        return Err(Error::InvalidSpec(report.join("; ")));
    }
    if config.record_every == 0 {
        return Err(Error::InvalidSpec("record_every must be positive".into()));
    }
    let mut h = match config.step {
        StepSize::Fixed(h) if h > 0.0 && h.is_finite() => h,
        StepSize::Fixed(h) => {
            return Err(Error::InvalidSpec(format!("step size must be positive, got {h}")))
        }
        StepSize::Auto => f64::NAN,
    };
    let constants = compute_constants(spec)?;
    if h.is_nan() {
        h = constants.step_size;
    }
    let op = SaddleOperator::new(spec)?;
    let zeta0 = initial_point(spec, config);

    loop {
        match run_fixed(spec, &op, config, reference, comm, &zeta0, h) {
            Err(Error::Divergence { .. }) if config.adaptive_halving && h > 1e-12 => {
                h *= 0.5;
            }
            Err(e) => return Err(e),
            Ok((averages, last, trace, iterations)) => {
                let bound_report = bounds(spec, &constants, iterations, reference, &zeta0);
                return Ok(SolverOutput {
                    averages,
                    last,
                    trace,
                    constants,
                    bound_report,
                    step_size: h,
                    iterations,
                });
            }
        }
    }
}

type RunParts = (IterateVector, IterateVector, RunTrace, usize);

fn run_fixed<C: Communicator + ?Sized>(
    spec: &ProblemSpec,
    op: &SaddleOperator,
    config: &SolverConfig,
    reference: Option<&Comparator>,
    comm: &C,
    zeta0: &IterateVector,
    h: f64,
) -> Result<RunParts> {
    let layout = op.layout();
    let mut stepper = Stepper::new(op, comm, config.parallel);
    let mut zeta = zeta0.clone();
    let mut half = IterateVector::zeros(layout);
    let mut next = IterateVector::zeros(layout);
    let mut sum = ErgodicSum::new(layout);
    let mut trace = RunTrace::default();
    trace.rows.push(diagnostics_with(spec, op, zeta0, 0, reference)?);

    let n = config.max_iters;
    let mut done = 0;
    for i in 0..n {
        stepper.step(&zeta, h, &mut half, &mut next);
        if !half.is_finite() || !next.is_finite() {
            return Err(Error::Divergence {
                iteration: i,
                step: h,
            });
        }
        sum.add(&half);
        std::mem::swap(&mut zeta, &mut next);
        done = i + 1;
        if done % config.record_every == 0 || done == n {
            let row = diagnostics_with(spec, op, &sum.mean(done), done, reference)?;
            let stop = config.tolerance > 0.0 && row.combined_residual() <= config.tolerance;
            trace.rows.push(row);
            if stop {
                break;
            }
        }
    }
    let averages = if done == 0 { zeta0.clone() } else { sum.mean(done) };
    Ok((averages, zeta, trace, done))
}

fn bounds(
    spec: &ProblemSpec,
    c: &ProblemConstants,
    n: usize,
    reference: Option<&Comparator>,
    zeta0: &IterateVector,
) -> BoundReport {
    let nf = n as f64;
    let base = 17.0 * 2f64.sqrt() * c.l_zeta / nf;
    let sigma_coupled = spec
        .agents
        .iter()
        .filter_map(|a| {
            crate::graph::matrix_stats(&crate::dense::vstack(&[&a.a, &a.c], a.dim))
                .ok()
                .map(|s| s.sigma_min_pos)
        })
        .fold(f64::INFINITY, f64::min);
    let sigma_shared = c.sigma_min_shared.unwrap_or(f64::NAN);
    let lam = c.spectrum.lambda_min_pos;
    let gap_bound = reference.and_then(|r| {
        // comparator point: (x*, x̃* in every copy), all multipliers zero
        let mut star = IterateVector::zeros(zeta0.layout());
        star.x = r.x.clone();
        star.xt = (0..spec.agent_count()).flat_map(|_| r.xt.iter().copied()).collect();
        let mut diff = star;
        for (d, z) in diff.fields_mut().into_iter().zip(zeta0.fields()) {
            d.iter_mut().zip(z.iter()).for_each(|(d, z)| *d -= z);
        }
        weighted_norm(c, &diff)
            .ok()
            .map(|w| c.l_zeta * w * w / (2.0 * nf))
    });
    BoundReport {
        iterations: n,
        fn_residual_bound: 3.0 * c.l_zeta / nf,
        gap_bound,
        coupled_printed: base * sigma_coupled,
        coupled_divided: base / sigma_coupled,
        shared_printed: base * sigma_shared,
        shared_divided: base / sigma_shared,
        consensus_dual_printed: 0.5 * base * lam,
        consensus_dual_divided: 0.5 * base / lam,
        consensus_primal_printed: 0.5 * base * lam,
        consensus_primal_divided: 0.5 * base / lam,
    }
}

/// Monitored residuals at an (averaged) iterate. Uses the Laplacian of the
/// spec's graph; never goes through a solver communicator.
pub fn diagnostics(
    spec: &ProblemSpec,
    zeta: &IterateVector,
    reference: Option<&Comparator>,
) -> Result<TraceRow> {
    let op = SaddleOperator::new(spec)?;
    if zeta.layout() != op.layout() {
        return Err(Error::dim("iterate layout", op.layout().agents(), zeta.layout().agents()));
    }
    diagnostics_with(spec, &op, zeta, 0, reference)
}

fn diagnostics_with(
    spec: &ProblemSpec,
    op: &SaddleOperator,
    zeta: &IterateVector,
    iter: usize,
    reference: Option<&Comparator>,
) -> Result<TraceRow> {
    let xt_mean = zeta.xt_mean();
    let objective = centralized_objective(spec, &zeta.x, &xt_mean)?;
    let [eq, ineq, seq, sineq] = coupled_residuals(spec, &zeta.x, &xt_mean)?.violation_norms();
    let wy = op.dual_matrix().lifted_matvec(&zeta.y)?;
    let wxt = op.shared_matrix().lifted_matvec(&zeta.xt)?;
    let l = spec.agent_count();
    let mut disagreement: f64 = 0.0;
    for i in 0..l {
        for j in i + 1..l {
            disagreement = disagreement.max(dense::dist(zeta.xt_block(i), zeta.xt_block(j)));
        }
    }
    let gap_surrogate = match reference {
        None => f64::NAN,
        Some(r) => {
            let xs = spec.split(&r.x)?;
            let mut gap = 0.0;
            for (k, a) in spec.agents.iter().enumerate() {
                gap += a.objective.eval(zeta.x_block(k), zeta.xt_block(k));
                gap -= local_lagrangian(spec, k, xs[k], &r.xt, zeta.y_block(k), zeta.yt_block(k))?;
            }
            gap
        }
    };
    Ok(TraceRow {
        iter,
        objective,
        eq_residual: eq,
        ineq_residual: ineq,
        shared_eq_residual: seq,
        shared_ineq_residual: sineq,
        consensus_dual: dense::norm(&wy),
        consensus_primal: dense::norm(&wxt),
        xt_disagreement: disagreement,
        gap_surrogate,
    })
}
