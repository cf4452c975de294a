//! Decentralized problem model: per-agent objectives and constraint slices,
//! shared constraints, box sets and the communication graph.
//!
//! ```text
//!   min   Σ_k f^k(x^k, x̃)
//!   s.t.  Σ_k (A^k x^k − b^k) = 0,   Σ_k (C^k x^k − d^k) ≤ 0,
//!         Ã x̃ − b̃ = 0,              C̃ x̃ − d̃ ≤ 0,
//!         x^k ∈ X^k,  x̃ ∈ X̃          (boxes)
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dense;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Axis-aligned box `[lower, upper]` with finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        match b.violations().first() {
            Some(v) => Err(Error::InvalidSpec(v.clone())),
            None => Ok(b),
        }
    }

    /// Same bounds for every coordinate.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn empty() -> Self {
        Self {
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lower.len() != self.upper.len() {
            out.push(format!(
                "box bound lengths differ ({} vs {})",
                self.lower.len(),
                self.upper.len()
            ));
            return out;
        }
        for (i, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                out.push(format!("box coordinate {i} has a non-finite bound"));
            } else if lo > hi {
                out.push(format!("box coordinate {i}: lower {lo} > upper {hi}"));
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    /// Euclidean diameter `‖upper − lower‖`.
    pub fn diameter(&self) -> f64 {
        dense::dist(&self.upper, &self.lower)
    }

    /// `max_{x ∈ box} ‖x‖`
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .fold(0.0, |s, v| s + v)
            .sqrt()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((&v, &l), &u)| v >= l - tol && v <= u + tol)
    }
}

/// Smooth convex objective `f^k(x^k, x̃)` of one agent.
pub trait Objective: Send + Sync + fmt::Debug {
    fn private_dim(&self) -> usize;

    fn shared_dim(&self) -> usize;

    fn eval(&self, x: &[f64], xt: &[f64]) -> f64;

    /// Writes `∇_x f` into `gx` and `∇_x̃ f` into `gxt`.
    fn grad(&self, x: &[f64], xt: &[f64], gx: &mut [f64], gxt: &mut [f64]);

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        None
    }
}

/// `½ vᵀ Q v + qᵀ v + c` over the joint vector `v = (x^k, x̃)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    private_dim: usize,
    q_mat: DMatrix<f64>,
    q_vec: Vec<f64>,
    constant: f64,
}

impl QuadraticObjective {
    pub fn new(
        private_dim: usize,
        q_mat: DMatrix<f64>,
        q_vec: Vec<f64>,
        constant: f64,
    ) -> Result<Self> {
        let n = q_vec.len();
        if private_dim > n {
            return Err(Error::dim("quadratic private dimension", n, private_dim));
        }
        if q_mat.nrows() != n || q_mat.ncols() != n {
            return Err(Error::dim("quadratic Q", n, q_mat.nrows()));
        }
        let scale = 1.0 + q_mat.abs().max();
        for i in 0..n {
            for j in 0..i {
                if (q_mat[(i, j)] - q_mat[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidSpec("quadratic Q is not symmetric".into()));
                }
            }
        }
        let ev = dense::sym_eigenvalues(&q_mat);
        if let Some(&lo) = ev.first() {
            if lo < -1e-9 * scale {
                return Err(Error::InvalidSpec(format!(
                    "quadratic Q is not positive semidefinite (eigenvalue {lo:.3e})"
                )));
            }
        }
        Ok(Self {
            private_dim,
            q_mat,
            q_vec,
            constant,
        })
    }

    /// `½ Σ w_i (v_i − c_i)²`: diagonal quadratic centred at `center`.
    pub fn separable(private_dim: usize, weights: &[f64], center: &[f64]) -> Result<Self> {
        let q_mat = DMatrix::from_diagonal(&DVector::from_row_slice(weights));
        let q_vec: Vec<f64> = weights.iter().zip(center).map(|(w, c)| -w * c).collect();
        let constant = 0.5 * weights.iter().zip(center).map(|(w, c)| w * c * c).fold(0.0, |s, v| s + v);
        Self::new(private_dim, q_mat, q_vec, constant)
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.q_mat
    }

    pub fn linear(&self) -> &[f64] {
        &self.q_vec
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// `λ_max(Q)`, the tightest Lipschitz constant of the gradient.
    pub fn lipschitz(&self) -> f64 {
        dense::sym_eigenvalues(&self.q_mat)
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(0.0)
    }

    fn joint<'a>(&self, x: &'a [f64], xt: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        x.iter().chain(xt).copied()
    }
}

impl Objective for QuadraticObjective {
    fn private_dim(&self) -> usize {
        self.private_dim
    }

    fn shared_dim(&self) -> usize {
        self.q_vec.len() - self.private_dim
    }

    fn eval(&self, x: &[f64], xt: &[f64]) -> f64 {
        let n = self.q_vec.len();
        let data = self.q_mat.as_slice();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for (j, vj) in self.joint(x, xt).enumerate() {
            let col = &data[j * n..(j + 1) * n];
            let qv: f64 = col.iter().zip(self.joint(x, xt)).map(|(c, v)| c * v).sum();
            quad += vj * qv;
            lin += self.q_vec[j] * vj;
        }
        0.5 * quad + lin + self.constant
    }

    fn grad(&self, x: &[f64], xt: &[f64], gx: &mut [f64], gxt: &mut [f64]) {
        let n = self.q_vec.len();
        let p = self.private_dim;
        let data = self.q_mat.as_slice();
        // Q symmetric: row i equals column i
        for i in 0..n {
            let col = &data[i * n..(i + 1) * n];
            let mut g = self.q_vec[i];
            for (c, v) in col[..p].iter().zip(x) {
                g += c * v;
            }
            for (c, v) in col[p..].iter().zip(xt) {
                g += c * v;
            }
            if i < p {
                gx[i] = g;
            } else {
                gxt[i - p] = g;
            }
        }
    }

    fn as_quadratic(&self) -> Option<&QuadraticObjective> {
        Some(self)
    }
}

/// Agent `k`'s private data.
#[derive(Debug, Clone)]
pub struct LocalBlock {
    pub dim: usize,
    pub objective: Arc<dyn Objective>,
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub c: DMatrix<f64>,
    pub d: Vec<f64>,
    pub bounds: BoxSet,
    pub lipschitz: f64,
}

impl LocalBlock {
    /// Block with the given objective and box and no constraint rows; the
    /// caller fills `a, b, c, d` to the global row counts.
    pub fn new(objective: Arc<dyn Objective>, bounds: BoxSet, lipschitz: f64) -> Self {
        let dim = bounds.dim();
        Self {
            dim,
            objective,
            a: DMatrix::zeros(0, dim),
            b: Vec::new(),
            c: DMatrix::zeros(0, dim),
            d: Vec::new(),
            bounds,
            lipschitz,
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: Vec<f64>) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_inequalities(mut self, c: DMatrix<f64>, d: Vec<f64>) -> Self {
        self.c = c;
        self.d = d;
        self
    }
}

/// Constraints on the shared variable, known to every agent.
#[derive(Debug, Clone)]
pub struct SharedBlock {
    pub dim: usize,
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub c: DMatrix<f64>,
    pub d: Vec<f64>,
    pub bounds: BoxSet,
}

impl SharedBlock {
    /// No shared variable at all.
    pub fn none() -> Self {
        Self::unconstrained(BoxSet::empty())
    }

    pub fn unconstrained(bounds: BoxSet) -> Self {
        let dim = bounds.dim();
        Self {
            dim,
            a: DMatrix::zeros(0, dim),
            b: Vec::new(),
            c: DMatrix::zeros(0, dim),
            d: Vec::new(),
            bounds,
        }
    }

    pub fn eq_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ineq_rows(&self) -> usize {
        self.c.nrows()
    }
}

/// Full decentralized instance. Immutable once built.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub agents: Vec<LocalBlock>,
    pub shared: SharedBlock,
    pub m: usize,
    pub h: usize,
    pub graph: Graph,
}

/// Coupled and shared constraint residuals at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub shared_eq: Vec<f64>,
    pub shared_ineq: Vec<f64>,
}

impl Residuals {
    /// Norms of equality residuals and of positive parts of inequality
    /// residuals: `(eq, ineq, shared_eq, shared_ineq)`.
    pub fn violation_norms(&self) -> [f64; 4] {
        let pos = |v: &[f64]| v.iter().map(|r| r.max(0.0).powi(2)).fold(0.0, |s, v| s + v).sqrt();
        [
            dense::norm(&self.eq),
            pos(&self.ineq),
            dense::norm(&self.shared_eq),
            pos(&self.shared_ineq),
        ]
    }
}

impl ProblemSpec {
    pub fn new(agents: Vec<LocalBlock>, shared: SharedBlock, graph: Graph) -> Result<Self> {
        let m = agents.first().map_or(0, |a| a.a.nrows());
        let h = agents.first().map_or(0, |a| a.c.nrows());
        let spec = Self {
            agents,
            shared,
            m,
            h,
            graph,
        };
        let report = validate(&spec);
        if report.is_empty() {
            Ok(spec)
        } else {
            Err(Error::InvalidSpec(report.join("; ")))
        }
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// `n = Σ n_k`
    pub fn private_dim(&self) -> usize {
        self.agents.iter().map(|a| a.dim).sum()
    }

    /// `ñ`
    pub fn shared_dim(&self) -> usize {
        self.shared.dim
    }

    /// Offsets of each agent's block inside the stacked private vector.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.agents.len() + 1);
        let mut acc = 0;
        out.push(0);
        for a in &self.agents {
            acc += a.dim;
            out.push(acc);
        }
        out
    }

    /// Splits a stacked private vector into agent blocks.
    pub fn split<'a>(&self, x: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        let n = self.private_dim();
        if x.len() != n {
            return Err(Error::dim("private vector", n, x.len()));
        }
        let off = self.offsets();
        Ok(off.windows(2).map(|w| &x[w[0]..w[1]]).collect())
    }

    pub fn all_quadratic(&self) -> bool {
        self.agents.iter().all(|a| a.objective.as_quadratic().is_some())
    }

    /// `[A^1 … A^l]`, `m × n`
    pub fn stacked_a(&self) -> DMatrix<f64> {
        self.hstack(|a| &a.a, self.m)
    }

    /// `[C^1 … C^l]`, `h × n`
    pub fn stacked_c(&self) -> DMatrix<f64> {
        self.hstack(|a| &a.c, self.h)
    }

    fn hstack<'a>(&'a self, pick: impl Fn(&'a LocalBlock) -> &'a DMatrix<f64>, rows: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, self.private_dim());
        let off = self.offsets();
        for (k, a) in self.agents.iter().enumerate() {
            out.view_mut((0, off[k]), (rows, a.dim)).copy_from(pick(a));
        }
        out
    }

    pub fn b_total(&self) -> Vec<f64> {
        sum_vecs(self.agents.iter().map(|a| a.b.as_slice()), self.m)
    }

    pub fn d_total(&self) -> Vec<f64> {
        sum_vecs(self.agents.iter().map(|a| a.d.as_slice()), self.h)
    }
}

fn sum_vecs<'a>(it: impl Iterator<Item = &'a [f64]>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for v in it {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out
}

/// Lists every violated structural invariant; empty iff the spec is valid.
pub fn validate(spec: &ProblemSpec) -> Vec<String> {
    let mut out = Vec::new();
    let l = spec.agents.len();
    let nt = spec.shared.dim;
    if l < 2 {
        out.push(format!("need at least two agents, found {l}"));
    }
    for (k, a) in spec.agents.iter().enumerate() {
        if a.dim == 0 {
            out.push(format!("agent {k}: dimension must be positive"));
        }
        if a.a.ncols() != a.dim {
            out.push(format!(
                "agent {k}: A has {} columns, expected {}",
                a.a.ncols(),
                a.dim
            ));
        }
        if a.c.ncols() != a.dim {
            out.push(format!(
                "agent {k}: C has {} columns, expected {}",
                a.c.ncols(),
                a.dim
            ));
        }
        if a.a.nrows() != spec.m || a.b.len() != spec.m {
            out.push(format!(
                "agent {k}: A/b have {}/{} rows, expected {}",
                a.a.nrows(),
                a.b.len(),
                spec.m
            ));
        }
        if a.c.nrows() != spec.h || a.d.len() != spec.h {
            out.push(format!(
                "agent {k}: C/d have {}/{} rows, expected {}",
                a.c.nrows(),
                a.d.len(),
                spec.h
            ));
        }
        if a.bounds.dim() != a.dim {
            out.push(format!(
                "agent {k}: box has dimension {}, expected {}",
                a.bounds.dim(),
                a.dim
            ));
        }
        out.extend(a.bounds.violations().into_iter().map(|v| format!("agent {k}: {v}")));
        if !(a.lipschitz >= 0.0) {
            out.push(format!("agent {k}: Lipschitz constant must be nonnegative"));
        }
        if a.objective.private_dim() != a.dim || a.objective.shared_dim() != nt {
            out.push(format!(
                "agent {k}: objective acts on ({}, {}) variables, expected ({}, {nt})",
                a.objective.private_dim(),
                a.objective.shared_dim(),
                a.dim
            ));
        } else if let Some(q) = a.objective.as_quadratic() {
            let lq = q.lipschitz();
            if a.lipschitz < lq * (1.0 - 1e-9) - 1e-12 {
                out.push(format!(
                    "agent {k}: declared Lipschitz constant {} below λ_max(Q) = {lq}",
                    a.lipschitz
                ));
            }
        }
        let finite = a.a.iter().chain(a.c.iter()).chain(&a.b).chain(&a.d).all(|v| v.is_finite());
        if !finite {
            out.push(format!("agent {k}: constraint data must be finite"));
        }
    }
    let s = &spec.shared;
    if s.a.ncols() != s.dim || s.c.ncols() != s.dim {
        out.push(format!(
            "shared: Ã/C̃ have {}/{} columns, expected {}",
            s.a.ncols(),
            s.c.ncols(),
            s.dim
        ));
    }
    if s.a.nrows() != s.b.len() || s.c.nrows() != s.d.len() {
        out.push("shared: right-hand side lengths do not match row counts".into());
    }
    if s.bounds.dim() != s.dim {
        out.push(format!(
            "shared: box has dimension {}, expected {}",
            s.bounds.dim(),
            s.dim
        ));
    }
    out.extend(s.bounds.violations().into_iter().map(|v| format!("shared: {v}")));
    if spec.graph.node_count() != l {
        out.push(format!(
            "graph has {} nodes, expected {l}",
            spec.graph.node_count()
        ));
    } else if !spec.graph.is_connected() {
        out.push("communication graph is not connected".into());
    }
    out
}

/// `Σ_k f^k(x^k, x̃)`
pub fn centralized_objective(spec: &ProblemSpec, x: &[f64], xt: &[f64]) -> Result<f64> {
    if xt.len() != spec.shared.dim {
        return Err(Error::dim("shared vector", spec.shared.dim, xt.len()));
    }
    let blocks = spec.split(x)?;
    Ok(spec
        .agents
        .iter()
        .zip(blocks)
        .map(|(a, xk)| a.objective.eval(xk, xt))
        .sum())
}

pub fn coupled_residuals(spec: &ProblemSpec, x: &[f64], xt: &[f64]) -> Result<Residuals> {
    if xt.len() != spec.shared.dim {
        return Err(Error::dim("shared vector", spec.shared.dim, xt.len()));
    }
    let blocks = spec.split(x)?;
    let mut eq = vec![0.0; spec.m];
    let mut ineq = vec![0.0; spec.h];
    for (a, xk) in spec.agents.iter().zip(blocks) {
        dense::gemv(1.0, &a.a, xk, 1.0, &mut eq);
        dense::gemv(1.0, &a.c, xk, 1.0, &mut ineq);
        eq.iter_mut().zip(&a.b).for_each(|(r, b)| *r -= b);
        ineq.iter_mut().zip(&a.d).for_each(|(r, d)| *r -= d);
    }
    let s = &spec.shared;
    let mut shared_eq = vec![0.0; s.eq_rows()];
    dense::gemv(1.0, &s.a, xt, 0.0, &mut shared_eq);
    shared_eq.iter_mut().zip(&s.b).for_each(|(r, b)| *r -= b);
    let mut shared_ineq = vec![0.0; s.ineq_rows()];
    dense::gemv(1.0, &s.c, xt, 0.0, &mut shared_ineq);
    shared_ineq.iter_mut().zip(&s.d).for_each(|(r, d)| *r -= d);
    Ok(Residuals {
        eq,
        ineq,
        shared_eq,
        shared_ineq,
    })
}
