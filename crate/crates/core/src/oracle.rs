//! Centralized reference solutions.
//!
//! Quadratic instances are solved exactly by the active-set method in
//! [`crate::qp`] on the joint variable `v = (x, x̃)`. Other objectives, or
//! instances where the active-set method stalls, use a projected
//! extragradient on the centralized saddle problem, which has no consensus
//! variables and therefore shares no code path with the decentralized solver.

use nalgebra::{DMatrix, DVector};

use crate::dense;
use crate::error::{Error, Result};
use crate::graph::matrix_stats;
use crate::problem::{centralized_objective, coupled_residuals, ProblemSpec};
use crate::qp::{QpOptions, QuadProgram};
use crate::solver::Comparator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ActiveSet,
    Extragradient,
}

/// Primal-dual solution of the centralized problem.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    pub xt_star: Vec<f64>,
    /// `(λ; μ)` for the coupled rows, length `m + h`.
    pub y_star: Vec<f64>,
    /// `(λ̃; μ̃)` for the shared rows.
    pub yt_star: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub method: OracleMethod,
}

impl From<&OracleSolution> for Comparator {
    fn from(s: &OracleSolution) -> Self {
        Comparator {
            x: s.x_star.clone(),
            xt: s.xt_star.clone(),
            objective: s.objective,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Allow the iterative path for non-quadratic objectives or when the
    /// active-set method does not terminate.
    pub fallback: bool,
    /// Skip the active-set method entirely.
    pub force_fallback: bool,
    pub fallback_iters: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            fallback: true,
            force_fallback: false,
            fallback_iters: 10_000_000,
        }
    }
}

pub fn solve_centralized(spec: &ProblemSpec) -> Result<OracleSolution> {
    solve_centralized_with(spec, &OracleOptions::default())
}

pub fn solve_centralized_with(spec: &ProblemSpec, opts: &OracleOptions) -> Result<OracleSolution> {
    let non_quadratic = spec
        .agents
        .iter()
        .position(|a| a.objective.as_quadratic().is_none());
    if opts.force_fallback || non_quadratic.is_some() {
        if let (false, Some(k)) = (opts.fallback, non_quadratic) {
            return Err(Error::NonQuadratic(k));
        }
        return solve_extragradient(spec, opts.fallback_iters);
    }
    match solve_active_set(spec) {
        Err(Error::NoConvergence(_)) if opts.fallback => solve_extragradient(spec, opts.fallback_iters),
        other => other,
    }
}

/// Stacked constraint rows over `v = (x, x̃)`: coupled rows `(A; C)` then
/// shared rows `(Ã; C̃)`, with right-hand side `(Σb; Σd; b̃; d̃)`.
struct Rows {
    mat: DMatrix<f64>,
    rhs: Vec<f64>,
    /// `true` for inequality rows.
    ineq: Vec<bool>,
}

fn constraint_rows(spec: &ProblemSpec) -> Rows {
    let n = spec.private_dim();
    let nt = spec.shared_dim();
    let s = &spec.shared;
    let (m, h, sm, sh) = (spec.m, spec.h, s.eq_rows(), s.ineq_rows());
    let mut mat = DMatrix::zeros(m + h + sm + sh, n + nt);
    mat.view_mut((0, 0), (m, n)).copy_from(&spec.stacked_a());
    mat.view_mut((m, 0), (h, n)).copy_from(&spec.stacked_c());
    mat.view_mut((m + h, n), (sm, nt)).copy_from(&s.a);
    mat.view_mut((m + h + sm, n), (sh, nt)).copy_from(&s.c);
    let rhs = [spec.b_total(), spec.d_total(), s.b.clone(), s.d.clone()].concat();
    let ineq = [vec![false; m], vec![true; h], vec![false; sm], vec![true; sh]].concat();
    Rows { mat, rhs, ineq }
}

fn joint_bounds(spec: &ProblemSpec) -> (Vec<f64>, Vec<f64>) {
    let mut lo: Vec<f64> = spec.agents.iter().flat_map(|a| a.bounds.lower().to_vec()).collect();
    let mut hi: Vec<f64> = spec.agents.iter().flat_map(|a| a.bounds.upper().to_vec()).collect();
    lo.extend_from_slice(spec.shared.bounds.lower());
    hi.extend_from_slice(spec.shared.bounds.upper());
    (lo, hi)
}

/// `∇ Σ_k f^k` over `v = (x, x̃)`.
fn joint_gradient(spec: &ProblemSpec, v: &[f64]) -> Vec<f64> {
    let n = spec.private_dim();
    let (x, xt) = v.split_at(n);
    let off = spec.offsets();
    let mut g = vec![0.0; v.len()];
    let mut gxt = vec![0.0; xt.len()];
    for (k, a) in spec.agents.iter().enumerate() {
        let (gx, rest) = g.split_at_mut(n);
        a.objective
            .grad(&x[off[k]..off[k + 1]], xt, &mut gx[off[k]..off[k + 1]], &mut gxt);
        rest.iter_mut().zip(&gxt).for_each(|(r, v)| *r += v);
    }
    g
}

fn split_duals(spec: &ProblemSpec, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (y, yt) = u.split_at(spec.m + spec.h);
    (y.to_vec(), yt.to_vec())
}

fn finish(
    spec: &ProblemSpec,
    v: &[f64],
    y: Vec<f64>,
    yt: Vec<f64>,
    method: OracleMethod,
) -> Result<OracleSolution> {
    let (x, xt) = v.split_at(spec.private_dim());
    let kkt = kkt_residual(spec, x, xt, &y, &yt)?;
    Ok(OracleSolution {
        objective: centralized_objective(spec, x, xt)?,
        x_star: x.to_vec(),
        xt_star: xt.to_vec(),
        y_star: y,
        yt_star: yt,
        kkt_residual: kkt,
        method,
    })
}

/// Exact solve of an all-quadratic instance.
pub fn solve_active_set(spec: &ProblemSpec) -> Result<OracleSolution> {
    let n = spec.private_dim();
    let nt = spec.shared_dim();
    let dim = n + nt;
    let off = spec.offsets();
    let mut hessian = DMatrix::zeros(dim, dim);
    let mut linear = DVector::zeros(dim);
    for (k, a) in spec.agents.iter().enumerate() {
        let q = a
            .objective
            .as_quadratic()
            .ok_or(Error::NonQuadratic(k))?;
        let idx: Vec<usize> = (off[k]..off[k + 1]).chain(n..dim).collect();
        for (i, &gi) in idx.iter().enumerate() {
            linear[gi] += q.linear()[i];
            for (j, &gj) in idx.iter().enumerate() {
                hessian[(gi, gj)] += q.hessian()[(i, j)];
            }
        }
    }

    let rows = constraint_rows(spec);
    let eq_idx: Vec<usize> = (0..rows.rhs.len()).filter(|&i| !rows.ineq[i]).collect();
    let in_idx: Vec<usize> = (0..rows.rhs.len()).filter(|&i| rows.ineq[i]).collect();
    let (lo, hi) = joint_bounds(spec);

    let mut eq = DMatrix::zeros(eq_idx.len(), dim);
    for (r, &i) in eq_idx.iter().enumerate() {
        eq.set_row(r, &rows.mat.row(i));
    }
    let mut ineq = DMatrix::zeros(in_idx.len() + 2 * dim, dim);
    let mut ineq_rhs = DVector::zeros(in_idx.len() + 2 * dim);
    for (r, &i) in in_idx.iter().enumerate() {
        ineq.set_row(r, &rows.mat.row(i));
        ineq_rhs[r] = rows.rhs[i];
    }
    let base = in_idx.len();
    for j in 0..dim {
        ineq[(base + j, j)] = 1.0;
        ineq_rhs[base + j] = hi[j];
        ineq[(base + dim + j, j)] = -1.0;
        ineq_rhs[base + dim + j] = -lo[j];
    }
    let qp = QuadProgram {
        hessian,
        linear,
        eq,
        eq_rhs: DVector::from_iterator(eq_idx.len(), eq_idx.iter().map(|&i| rows.rhs[i])),
        ineq,
        ineq_rhs,
    };
    let start: DVector<f64> = DVector::from_iterator(dim, lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)));
    let sol = qp.solve(&start, &QpOptions::default())?;

    // land exactly inside the box; the active-set iterates may overshoot a
    // face by rounding
    let v: Vec<f64> = sol
        .x
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect();
    let (x, xt) = v.split_at(n);
    let (y, yt) = min_norm_multipliers(spec, x, xt)?;
    finish(spec, &v, y, yt, OracleMethod::ActiveSet)
}

/// Multipliers of smallest Euclidean norm that satisfy the KKT conditions at
/// the primal point `(x, x̃)`, with box multipliers absorbing the rest of the
/// Lagrangian gradient at active faces.
pub fn min_norm_multipliers(spec: &ProblemSpec, x: &[f64], xt: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = [x, xt].concat();
    let rows = constraint_rows(spec);
    let (lo, hi) = joint_bounds(spec);
    let grad = joint_gradient(spec, &v);
    let res = &rows.mat * DVector::from_row_slice(&v) - DVector::from_row_slice(&rows.rhs);

    // free multipliers: equality rows and active inequality rows
    let free: Vec<usize> = (0..rows.rhs.len())
        .filter(|&i| !rows.ineq[i] || res[i] >= -1e-8 * (1.0 + rows.rhs[i].abs()))
        .collect();
    let p = free.len();
    let mut kt = DMatrix::zeros(v.len(), p);
    for (c, &i) in free.iter().enumerate() {
        kt.set_column(c, &rows.mat.row(i).transpose());
    }

    let mut eq_rows = Vec::new();
    let mut eq_rhs = Vec::new();
    let mut in_rows = Vec::new();
    let mut in_rhs = Vec::new();
    for j in 0..v.len() {
        let tol = 1e-9 * (1.0 + lo[j].abs().max(hi[j].abs()));
        let at_lo = v[j] - lo[j] <= tol;
        let at_hi = hi[j] - v[j] <= tol;
        let row: Vec<f64> = kt.row(j).iter().copied().collect();
        match (at_lo, at_hi) {
            (true, true) => {}
            // (∇f + Kᵀu)_j ≥ 0
            (true, false) => {
                in_rows.push(row.iter().map(|a| -a).collect::<Vec<_>>());
                in_rhs.push(grad[j]);
            }
            // (∇f + Kᵀu)_j ≤ 0
            (false, true) => {
                in_rows.push(row);
                in_rhs.push(-grad[j]);
            }
            (false, false) => {
                eq_rows.push(row);
                eq_rhs.push(-grad[j]);
            }
        }
    }
    for (c, &i) in free.iter().enumerate() {
        if rows.ineq[i] {
            let mut row = vec![0.0; p];
            row[c] = -1.0;
            in_rows.push(row);
            in_rhs.push(0.0);
        }
    }
    let to_mat = |rs: &[Vec<f64>]| DMatrix::from_fn(rs.len(), p, |r, c| rs[r][c]);
    let qp = QuadProgram {
        hessian: DMatrix::identity(p, p),
        linear: DVector::zeros(p),
        eq: to_mat(&eq_rows),
        eq_rhs: DVector::from_vec(eq_rhs),
        ineq: to_mat(&in_rows),
        ineq_rhs: DVector::from_vec(in_rhs),
    };
    let opts = QpOptions {
        feas_tol: 1e-6,
        ..QpOptions::default()
    };
    let sol = qp.solve(&DVector::zeros(p), &opts)?;
    let mut u = vec![0.0; rows.rhs.len()];
    for (c, &i) in free.iter().enumerate() {
        u[i] = if rows.ineq[i] { sol.x[c].max(0.0) } else { sol.x[c] };
    }
    Ok(split_duals(spec, &u))
}

/// Projected extragradient on `min_v max_u Σf(v) + uᵀ(K v − r)` over the box
/// and `μ ≥ 0`. Returns whichever of the ergodic average and the last iterate
/// has the smaller KKT residual.
pub fn solve_extragradient(spec: &ProblemSpec, iters: usize) -> Result<OracleSolution> {
    let rows = constraint_rows(spec);
    let (lo, hi) = joint_bounds(spec);
    let dim = lo.len();
    let duals = rows.rhs.len();
    let sigma = if rows.mat.iter().any(|v| *v != 0.0) {
        matrix_stats(&rows.mat)?.sigma_max
    } else {
        0.0
    };
    let lip: f64 = spec.agents.iter().map(|a| a.lipschitz).sum::<f64>() + sigma;
    let step = if lip > 0.0 { 1.0 / lip } else { 1.0 };

    let project = |v: &mut [f64], u: &mut [f64]| {
        for ((x, l), h) in v.iter_mut().zip(&lo).zip(&hi) {
            *x = x.clamp(*l, *h);
        }
        for (m, &is_ineq) in u.iter_mut().zip(&rows.ineq) {
            if is_ineq && *m < 0.0 {
                *m = 0.0;
            }
        }
    };
    // writes base − step·F(at) into (out_v, out_u) and projects
    let step_from = |base_v: &[f64], base_u: &[f64], at_v: &[f64], at_u: &[f64], out_v: &mut [f64], out_u: &mut [f64]| {
        let g = joint_gradient(spec, at_v);
        dense::gemv_t(1.0, &rows.mat, at_u, 0.0, out_v);
        for ((o, b), gj) in out_v.iter_mut().zip(base_v).zip(&g) {
            *o = b - step * (gj + *o);
        }
        dense::gemv(1.0, &rows.mat, at_v, 0.0, out_u);
        for ((o, b), r) in out_u.iter_mut().zip(base_u).zip(&rows.rhs) {
            *o = b + step * (*o - r);
        }
        project(out_v, out_u);
    };

    let mut v: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let mut u = vec![0.0; duals];
    let (mut hv, mut hu) = (vec![0.0; dim], vec![0.0; duals]);
    let (mut nv, mut nu) = (vec![0.0; dim], vec![0.0; duals]);
    let mut sum = vec![0.0; dim + duals];
    let mut comp = vec![0.0; dim + duals];
    for i in 0..iters {
        step_from(&v, &u, &v, &u, &mut hv, &mut hu);
        step_from(&v, &u, &hv, &hu, &mut nv, &mut nu);
        if hv.iter().chain(&nu).chain(&nv).any(|x| !x.is_finite()) {
            return Err(Error::Divergence { iteration: i, step });
        }
        for (j, x) in hv.iter().chain(&hu).enumerate() {
            dense::neumaier_add(&mut sum[j], &mut comp[j], *x);
        }
        std::mem::swap(&mut v, &mut nv);
        std::mem::swap(&mut u, &mut nu);
    }

    let mut candidates = vec![(v, u)];
    if iters > 0 {
        let avg: Vec<f64> = sum.iter().zip(&comp).map(|(s, c)| (s + c) / iters as f64).collect();
        let (av, au) = avg.split_at(dim);
        candidates.push((av.to_vec(), au.to_vec()));
    }
    let mut best: Option<OracleSolution> = None;
    for (cv, cu) in candidates {
        let (y, yt) = split_duals(spec, &cu);
        let sol = finish(spec, &cv, y, yt, OracleMethod::Extragradient)?;
        if best.as_ref().is_none_or(|b| sol.kkt_residual < b.kkt_residual) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Projected stationarity of the Lagrangian, primal infeasibility and
/// complementarity violation, summed.
///
/// Stationarity is measured by the component of `−∇_v L` that points into
/// the box's tangent cone, so gradients pushing against an active face do not
/// count. Complementarity sums `|μ_i r_i|` over inequality rows plus any
/// negative part of `μ`.
pub fn kkt_residual(spec: &ProblemSpec, x: &[f64], xt: &[f64], y: &[f64], yt: &[f64]) -> Result<f64> {
    let n = spec.private_dim();
    if x.len() != n {
        return Err(Error::dim("private vector", n, x.len()));
    }
    if xt.len() != spec.shared_dim() {
        return Err(Error::dim("shared vector", spec.shared_dim(), xt.len()));
    }
    if y.len() != spec.m + spec.h {
        return Err(Error::dim("coupled multipliers", spec.m + spec.h, y.len()));
    }
    let shared_rows = spec.shared.eq_rows() + spec.shared.ineq_rows();
    if yt.len() != shared_rows {
        return Err(Error::dim("shared multipliers", shared_rows, yt.len()));
    }

    let rows = constraint_rows(spec);
    let (lo, hi) = joint_bounds(spec);
    let v = [x, xt].concat();
    let u = [y, yt].concat();
    let mut g = joint_gradient(spec, &v);
    dense::gemv_t(1.0, &rows.mat, &u, 1.0, &mut g);

    let mut stationarity = 0.0;
    let mut box_violation = 0.0;
    for j in 0..v.len() {
        let tol = 1e-9 * (1.0 + lo[j].abs().max(hi[j].abs()));
        let at_lo = v[j] - lo[j] <= tol;
        let at_hi = hi[j] - v[j] <= tol;
        let r = match (at_lo, at_hi) {
            (true, true) => 0.0,
            (true, false) => g[j].min(0.0),
            (false, true) => g[j].max(0.0),
            (false, false) => g[j],
        };
        stationarity += r * r;
        box_violation += (lo[j] - v[j]).max(0.0).powi(2) + (v[j] - hi[j]).max(0.0).powi(2);
    }

    let res = coupled_residuals(spec, x, xt)?;
    let feasibility: f64 = res.violation_norms().iter().sum::<f64>() + box_violation.sqrt();

    let r_all = [res.eq, res.ineq, res.shared_eq, res.shared_ineq].concat();
    let complementarity: f64 = u
        .iter()
        .zip(&r_all)
        .zip(&rows.ineq)
        .filter(|(_, is_ineq)| **is_ineq)
        .map(|((m, r), _)| (m * r).abs() + (-m).max(0.0))
        .sum();
    Ok(stationarity.sqrt() + feasibility + complementarity)
}
