//! Consensus saddle-point reformulation.
//!
//! Each agent keeps a copy `x̃^k` of the shared variable and its own dual
//! vectors `y^k = (λ^k; μ^k)`, `ỹ^k = (λ̃^k; μ̃^k)`. Consensus between the
//! copies is enforced through the multipliers `z`, `z̃` and the lifted
//! communication matrices:
//!
//! ```text
//!   min_{x, x̃, z} max_{y, ỹ, z̃}  Σ_k g^k(x^k, x̃^k, y^k, ỹ^k) + zᵀ W y + z̃ᵀ W̃ x̃
//!   g^k = f^k(x^k, x̃^k) + y^kᵀ (A^k x^k − b^k; C^k x^k − d^k)
//!                       + ỹ^kᵀ (Ã x̃^k − b̃;   C̃ x̃^k − d̃)
//! ```
//!
//! [`SaddleOperator`] evaluates the monotone gradient field of this function
//! with the max-block components negated, so every block is updated as
//! `ζ − h F(ζ)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dense;
use crate::error::{Error, Result};
use crate::graph::{laplacian, matrix_stats, CommunicationMatrix, Communicator, Spectrum};
use crate::problem::{BoxSet, Objective, ProblemSpec};

/// Block sizes of the stacked state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// Offsets of agent blocks in `x`, length `l + 1`.
    pub offsets: Vec<usize>,
    pub shared_dim: usize,
    /// `m` equality rows followed by `h` inequality rows.
    pub m: usize,
    pub h: usize,
    pub shared_m: usize,
    pub shared_h: usize,
}

impl Layout {
    pub fn of(spec: &ProblemSpec) -> Self {
        Self {
            offsets: spec.offsets(),
            shared_dim: spec.shared.dim,
            m: spec.m,
            h: spec.h,
            shared_m: spec.shared.eq_rows(),
            shared_h: spec.shared.ineq_rows(),
        }
    }

    pub fn agents(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dual_dim(&self) -> usize {
        self.m + self.h
    }

    pub fn shared_dual_dim(&self) -> usize {
        self.shared_m + self.shared_h
    }

    fn block_lens(&self) -> [Vec<usize>; 6] {
        let l = self.agents();
        [
            self.offsets.windows(2).map(|w| w[1] - w[0]).collect(),
            vec![self.shared_dim; l],
            vec![self.dual_dim(); l],
            vec![self.shared_dual_dim(); l],
            vec![self.dual_dim(); l],
            vec![self.shared_dim; l],
        ]
    }
}

/// Stacked state `ζ = (x, x̃, y, ỹ, z, z̃)`, each field a flat vector of `l`
/// agent blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateVector {
    layout: Layout,
    pub x: Vec<f64>,
    pub xt: Vec<f64>,
    pub y: Vec<f64>,
    pub yt: Vec<f64>,
    pub z: Vec<f64>,
    pub zt: Vec<f64>,
}

/// Mutable view of one agent's blocks.
pub struct AgentBlocksMut<'a> {
    pub x: &'a mut [f64],
    pub xt: &'a mut [f64],
    pub y: &'a mut [f64],
    pub yt: &'a mut [f64],
    pub z: &'a mut [f64],
    pub zt: &'a mut [f64],
}

fn split_lens<'a>(mut s: &'a mut [f64], lens: &[usize]) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(lens.len());
    for &n in lens {
        let (head, tail) = s.split_at_mut(n);
        out.push(head);
        s = tail;
    }
    out
}

impl IterateVector {
    pub fn zeros(layout: &Layout) -> Self {
        let l = layout.agents();
        Self {
            x: vec![0.0; *layout.offsets.last().unwrap_or(&0)],
            xt: vec![0.0; l * layout.shared_dim],
            y: vec![0.0; l * layout.dual_dim()],
            yt: vec![0.0; l * layout.shared_dual_dim()],
            z: vec![0.0; l * layout.dual_dim()],
            zt: vec![0.0; l * layout.shared_dim],
            layout: layout.clone(),
        }
    }

    /// Box midpoints for `x` and every copy of `x̃`; all multipliers zero.
    pub fn initial(spec: &ProblemSpec) -> Self {
        let mut out = Self::zeros(&Layout::of(spec));
        out.x = spec.agents.iter().flat_map(|a| a.bounds.midpoint()).collect();
        let mid = spec.shared.bounds.midpoint();
        out.xt = (0..spec.agent_count()).flat_map(|_| mid.iter().copied()).collect();
        out
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn fields(&self) -> [&Vec<f64>; 6] {
        [&self.x, &self.xt, &self.y, &self.yt, &self.z, &self.zt]
    }

    pub fn fields_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.x,
            &mut self.xt,
            &mut self.y,
            &mut self.yt,
            &mut self.z,
            &mut self.zt,
        ]
    }

    pub fn len(&self) -> usize {
        self.fields().iter().map(|f| f.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenation of all six fields.
    pub fn to_flat(&self) -> Vec<f64> {
        self.fields().iter().flat_map(|f| f.iter().copied()).collect()
    }

    pub fn from_flat(layout: &Layout, flat: &[f64]) -> Result<Self> {
        let mut out = Self::zeros(layout);
        if flat.len() != out.len() {
            return Err(Error::dim("stacked iterate", out.len(), flat.len()));
        }
        let mut pos = 0;
        for f in out.fields_mut() {
            let n = f.len();
            f.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        Ok(out)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields())
            .map(|(a, b)| dense::dot(a, b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.fields()
            .iter()
            .zip(other.fields())
            .map(|(a, b)| dense::dist(a, b).powi(2))
            .fold(0.0, |s, v| s + v)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|f| f.iter().all(|v| v.is_finite()))
    }

    pub fn x_block(&self, k: usize) -> &[f64] {
        &self.x[self.layout.offsets[k]..self.layout.offsets[k + 1]]
    }

    pub fn xt_block(&self, k: usize) -> &[f64] {
        let d = self.layout.shared_dim;
        &self.xt[k * d..(k + 1) * d]
    }

    pub fn y_block(&self, k: usize) -> &[f64] {
        let d = self.layout.dual_dim();
        &self.y[k * d..(k + 1) * d]
    }

    pub fn yt_block(&self, k: usize) -> &[f64] {
        let d = self.layout.shared_dual_dim();
        &self.yt[k * d..(k + 1) * d]
    }

    pub fn z_block(&self, k: usize) -> &[f64] {
        let d = self.layout.dual_dim();
        &self.z[k * d..(k + 1) * d]
    }

    pub fn zt_block(&self, k: usize) -> &[f64] {
        let d = self.layout.shared_dim;
        &self.zt[k * d..(k + 1) * d]
    }

    /// Mean of the agents' copies of the shared variable.
    pub fn xt_mean(&self) -> Vec<f64> {
        let l = self.layout.agents();
        let d = self.layout.shared_dim;
        let mut out = vec![0.0; d];
        for k in 0..l {
            for (o, v) in out.iter_mut().zip(self.xt_block(k)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= l as f64);
        out
    }

    /// Disjoint mutable views of every agent's blocks.
    pub fn agents_mut(&mut self) -> Vec<AgentBlocksMut<'_>> {
        let [lx, lxt, ly, lyt, lz, lzt] = self.layout.block_lens();
        let x = split_lens(&mut self.x, &lx);
        let xt = split_lens(&mut self.xt, &lxt);
        let y = split_lens(&mut self.y, &ly);
        let yt = split_lens(&mut self.yt, &lyt);
        let z = split_lens(&mut self.z, &lz);
        let zt = split_lens(&mut self.zt, &lzt);
        x.into_iter()
            .zip(xt)
            .zip(y)
            .zip(yt)
            .zip(z)
            .zip(zt)
            .map(|(((((x, xt), y), yt), z), zt)| AgentBlocksMut {
                x,
                xt,
                y,
                yt,
                z,
                zt,
            })
            .collect()
    }
}

/// Results of one communication round.
#[derive(Debug, Clone)]
pub struct Exchanged {
    pub wz: Vec<f64>,
    pub wy: Vec<f64>,
    pub wzt: Vec<f64>,
    pub wxt: Vec<f64>,
}

impl Exchanged {
    pub fn zeros(layout: &Layout) -> Self {
        let l = layout.agents();
        Self {
            wz: vec![0.0; l * layout.dual_dim()],
            wy: vec![0.0; l * layout.dual_dim()],
            wzt: vec![0.0; l * layout.shared_dim],
            wxt: vec![0.0; l * layout.shared_dim],
        }
    }
}

#[derive(Debug, Clone)]
struct AgentData {
    objective: Arc<dyn Objective>,
    // [A^k; C^k] and (b^k; d^k)
    k_mat: DMatrix<f64>,
    rhs: Vec<f64>,
    bounds: BoxSet,
}

/// Gradient field of the consensus saddle function, with projections.
#[derive(Debug, Clone)]
pub struct SaddleOperator {
    layout: Layout,
    agents: Vec<AgentData>,
    shared_k: DMatrix<f64>,
    shared_rhs: Vec<f64>,
    shared_bounds: BoxSet,
    w_dual: CommunicationMatrix,
    w_shared: CommunicationMatrix,
}

impl SaddleOperator {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        let w = laplacian(&spec.graph)?;
        Self::with_matrix(spec, &w)
    }

    /// Uses the given base communication matrix instead of the Laplacian.
    pub fn with_matrix(spec: &ProblemSpec, w: &CommunicationMatrix) -> Result<Self> {
        let layout = Layout::of(spec);
        if w.node_count() != spec.agent_count() {
            return Err(Error::dim("communication matrix", spec.agent_count(), w.node_count()));
        }
        let agents = spec
            .agents
            .iter()
            .map(|a| AgentData {
                objective: a.objective.clone(),
                k_mat: dense::vstack(&[&a.a, &a.c], a.dim),
                rhs: a.b.iter().chain(&a.d).copied().collect(),
                bounds: a.bounds.clone(),
            })
            .collect();
        let s = &spec.shared;
        Ok(Self {
            agents,
            shared_k: dense::vstack(&[&s.a, &s.c], s.dim),
            shared_rhs: s.b.iter().chain(&s.d).copied().collect(),
            shared_bounds: s.bounds.clone(),
            w_dual: w.lift(layout.dual_dim()),
            w_shared: w.lift(layout.shared_dim),
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// `W ⊗ I_{m+h}`
    pub fn dual_matrix(&self) -> &CommunicationMatrix {
        &self.w_dual
    }

    /// `W ⊗ I_ñ`
    pub fn shared_matrix(&self) -> &CommunicationMatrix {
        &self.w_shared
    }

    fn check(&self, zeta: &IterateVector) -> Result<()> {
        if zeta.layout != self.layout {
            return Err(Error::dim("iterate layout", self.layout.agents(), zeta.layout.agents()));
        }
        Ok(())
    }

    /// One communication round: the four lifted products `W z, W y, W̃ z̃, W̃ x̃`.
    pub fn exchange<C: Communicator + ?Sized>(
        &self,
        comm: &C,
        zeta: &IterateVector,
        ex: &mut Exchanged,
    ) {
        comm.exchange(&self.w_dual, &zeta.z, &mut ex.wz);
        comm.exchange(&self.w_dual, &zeta.y, &mut ex.wy);
        comm.exchange(&self.w_shared, &zeta.zt, &mut ex.wzt);
        comm.exchange(&self.w_shared, &zeta.xt, &mut ex.wxt);
    }

    /// Evaluates `F(ζ)`. Exactly one communication round.
    pub fn eval<C: Communicator + ?Sized>(
        &self,
        comm: &C,
        zeta: &IterateVector,
    ) -> Result<IterateVector> {
        self.check(zeta)?;
        let mut ex = Exchanged::zeros(&self.layout);
        self.exchange(comm, zeta, &mut ex);
        let mut out = IterateVector::zeros(&self.layout);
        self.local_update(zeta, zeta, &ex, 0.0, false, &mut out, false);
        Ok(out)
    }

    /// Agent-local part of a step, evaluated for every agent:
    ///
    /// * `step == 0`, `project == false`: `out = F(at)` (field only);
    /// * otherwise: `out = proj(base − step · F(at))`.
    ///
    /// `ex` must hold the communication round for `at`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn local_update(
        &self,
        base: &IterateVector,
        at: &IterateVector,
        ex: &Exchanged,
        step: f64,
        project: bool,
        out: &mut IterateVector,
        parallel: bool,
    ) {
        let field_only = step == 0.0 && !project;
        let work = |(k, blk): (usize, AgentBlocksMut<'_>)| {
            self.agent_update(k, base, at, ex, step, field_only, blk);
        };
        if parallel {
            out.agents_mut().into_par_iter().enumerate().for_each(work);
        } else {
            out.agents_mut().into_iter().enumerate().for_each(work);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn agent_update(
        &self,
        k: usize,
        base: &IterateVector,
        at: &IterateVector,
        ex: &Exchanged,
        step: f64,
        field_only: bool,
        out: AgentBlocksMut<'_>,
    ) {
        let a = &self.agents[k];
        let lay = &self.layout;
        let (dy, dyt, dt) = (lay.dual_dim(), lay.shared_dual_dim(), lay.shared_dim);
        let xk = at.x_block(k);
        let xtk = at.xt_block(k);
        let yk = at.y_block(k);
        let ytk = at.yt_block(k);

        // field into `out`
        a.objective.grad(xk, xtk, out.x, out.xt);
        dense::gemv_t(1.0, &a.k_mat, yk, 1.0, out.x);
        dense::gemv_t(1.0, &self.shared_k, ytk, 1.0, out.xt);
        for (o, w) in out.xt.iter_mut().zip(&ex.wzt[k * dt..(k + 1) * dt]) {
            *o += w;
        }
        dense::gemv(-1.0, &a.k_mat, xk, 0.0, out.y);
        for ((o, r), w) in out.y.iter_mut().zip(&a.rhs).zip(&ex.wz[k * dy..(k + 1) * dy]) {
            *o += r - w;
        }
        dense::gemv(-1.0, &self.shared_k, xtk, 0.0, out.yt);
        for (o, r) in out.yt.iter_mut().zip(&self.shared_rhs) {
            *o += r;
        }
        out.z.copy_from_slice(&ex.wy[k * dy..(k + 1) * dy]);
        for (o, w) in out.zt.iter_mut().zip(&ex.wxt[k * dt..(k + 1) * dt]) {
            *o = -w;
        }
        if field_only {
            return;
        }

        // proj(base − step · F)
        let descend = |o: &mut [f64], b: &[f64]| {
            for (o, b) in o.iter_mut().zip(b) {
                *o = b - step * *o;
            }
        };
        descend(out.x, base.x_block(k));
        a.bounds.clip(out.x);
        descend(out.xt, base.xt_block(k));
        self.shared_bounds.clip(out.xt);
        descend(out.y, base.y_block(k));
        out.y[lay.m..].iter_mut().for_each(|v| *v = v.max(0.0));
        descend(out.yt, base.yt_block(k));
        out.yt[lay.shared_m..].iter_mut().for_each(|v| *v = v.max(0.0));
        descend(out.z, base.z_block(k));
        descend(out.zt, base.zt_block(k));
        debug_assert!(out.y.len() == dy && out.yt.len() == dyt);
    }

    /// Euclidean projection onto the feasible set: boxes for `x` and every
    /// `x̃^k`, nonnegativity of the inequality multipliers.
    pub fn project(&self, zeta: &IterateVector) -> Result<IterateVector> {
        self.check(zeta)?;
        let mut out = zeta.clone();
        project_in_place(&self.layout, &self.agents, &self.shared_bounds, &mut out);
        Ok(out)
    }
}

fn project_in_place(layout: &Layout, agents: &[AgentData], shared: &BoxSet, out: &mut IterateVector) {
    let (m, sm) = (layout.m, layout.shared_m);
    for (k, blk) in out.agents_mut().into_iter().enumerate() {
        agents[k].bounds.clip(blk.x);
        shared.clip(blk.xt);
        blk.y[m..].iter_mut().for_each(|v| *v = v.max(0.0));
        blk.yt[sm..].iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

/// `proj(ζ)` for a spec without building the full operator.
pub fn project(spec: &ProblemSpec, zeta: &IterateVector) -> Result<IterateVector> {
    let layout = Layout::of(spec);
    if zeta.layout != layout {
        return Err(Error::dim("iterate layout", layout.agents(), zeta.layout.agents()));
    }
    let agents: Vec<AgentData> = spec
        .agents
        .iter()
        .map(|a| AgentData {
            objective: a.objective.clone(),
            k_mat: DMatrix::zeros(0, 0),
            rhs: Vec::new(),
            bounds: a.bounds.clone(),
        })
        .collect();
    let mut out = zeta.clone();
    project_in_place(&layout, &agents, &spec.shared.bounds, &mut out);
    Ok(out)
}

/// `F(ζ)` with explicit lifted matrices for the dual (`block_dim = m+h`) and
/// shared (`block_dim = ñ`) consensus products.
pub fn operator_eval(
    spec: &ProblemSpec,
    w_lift_y: &CommunicationMatrix,
    w_lift_xt: &CommunicationMatrix,
    zeta: &IterateVector,
) -> Result<IterateVector> {
    let layout = Layout::of(spec);
    if w_lift_y.block_dim() != layout.dual_dim() {
        return Err(Error::dim("dual lift block", layout.dual_dim(), w_lift_y.block_dim()));
    }
    if w_lift_xt.block_dim() != layout.shared_dim {
        return Err(Error::dim("shared lift block", layout.shared_dim, w_lift_xt.block_dim()));
    }
    let op = SaddleOperator::with_matrix(spec, w_lift_y)?;
    op.eval(&crate::graph::DirectCommunicator, zeta)
}

/// `g^k(x^k, x̃^k, y^k, ỹ^k)`
pub fn local_lagrangian(
    spec: &ProblemSpec,
    k: usize,
    x: &[f64],
    xt: &[f64],
    y: &[f64],
    yt: &[f64],
) -> Result<f64> {
    let a = spec
        .agents
        .get(k)
        .ok_or_else(|| Error::dim("agent index", spec.agent_count(), k))?;
    let s = &spec.shared;
    let checks = [
        ("x^k", a.dim, x.len()),
        ("x̃^k", s.dim, xt.len()),
        ("y^k", spec.m + spec.h, y.len()),
        ("ỹ^k", s.eq_rows() + s.ineq_rows(), yt.len()),
    ];
    for (name, want, got) in checks {
        if want != got {
            return Err(Error::dim(name, want, got));
        }
    }
    let mut r = vec![0.0; spec.m + spec.h];
    dense::gemv(1.0, &dense::vstack(&[&a.a, &a.c], a.dim), x, 0.0, &mut r);
    let rhs: Vec<f64> = a.b.iter().chain(&a.d).copied().collect();
    let mut val = a.objective.eval(x, xt);
    val += r.iter().zip(&rhs).zip(y).map(|((r, b), y)| y * (r - b)).fold(0.0, |s, v| s + v);
    let mut rt = vec![0.0; yt.len()];
    dense::gemv(1.0, &dense::vstack(&[&s.a, &s.c], s.dim), xt, 0.0, &mut rt);
    let rhs_t: Vec<f64> = s.b.iter().chain(&s.d).copied().collect();
    val += rt.iter().zip(&rhs_t).zip(yt).map(|((r, b), y)| y * (r - b)).fold(0.0, |s, v| s + v);
    Ok(val)
}

/// Domain radii, gradient bounds and smoothness constants of the saddle
/// problem, plus the derived step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants {
    pub r_y: f64,
    pub r_yt: f64,
    pub r_z: f64,
    pub r_zt: f64,
    pub m_y: f64,
    pub m_xt: f64,
    pub l_xx: f64,
    pub l_xy: f64,
    pub l_yx: f64,
    pub l_yy: f64,
    /// Largest agent box diameter.
    pub r_x: f64,
    /// Shared box diameter.
    pub r_xt: f64,
    pub l_zeta: f64,
    /// Euclidean Lipschitz bound of the gradient field: `L_xx + √(L_xy² + λ_max(W)²)`.
    pub operator_lipschitz: f64,
    pub step_size: f64,
    pub grad_x_bound: f64,
    pub grad_xt_bound: f64,
    pub spectrum: Spectrum,
    /// `σ_min^+` of the stacked coupled and shared constraint matrices
    /// (`None` when the matrix is absent or zero).
    pub sigma_min_coupled: Option<f64>,
    pub sigma_min_shared: Option<f64>,
    /// Dual radii that had to be replaced by the cap.
    pub capped: Vec<&'static str>,
}

/// Radius used when a dual radius is unbounded (zero constraint matrix).
pub const DEFAULT_RADIUS_CAP: f64 = 1e6;

/// Largest number of box corners enumerated when bounding gradient norms.
const CORNER_LIMIT_LOG2: usize = 20;

pub fn compute_constants(spec: &ProblemSpec) -> Result<ProblemConstants> {
    compute_constants_with(spec, DEFAULT_RADIUS_CAP)
}

pub fn compute_constants_with(spec: &ProblemSpec, cap: f64) -> Result<ProblemConstants> {
    let l = spec.agent_count() as f64;
    let spectrum = laplacian(&spec.graph)?.spectral();
    let (grad_x_bound, grad_xt_bound) = gradient_bounds(spec);
    let mut capped = Vec::new();

    let coupled = dense::vstack(&[&spec.stacked_a(), &spec.stacked_c()], spec.private_dim());
    let s = &spec.shared;
    let shared = dense::vstack(&[&s.a, &s.c], s.dim);
    let coupled_stats = matrix_stats(&coupled).ok();
    let shared_stats = matrix_stats(&shared).ok();

    let r_y = if coupled.nrows() == 0 {
        0.0
    } else if let Some(st) = coupled_stats {
        l.sqrt() * grad_x_bound / st.sigma_min_pos
    } else {
        capped.push("R_y");
        cap
    };
    let r_yt = if shared.nrows() == 0 {
        0.0
    } else if let Some(st) = shared_stats {
        l.sqrt() * grad_xt_bound / st.sigma_min_pos
    } else {
        capped.push("R_yt");
        cap
    };

    let mut m_y: f64 = 0.0;
    let mut l_xy: f64 = shared_stats.map_or(0.0, |st| st.sigma_max);
    for a in &spec.agents {
        let ka = dense::vstack(&[&a.a, &a.c], a.dim);
        let smax = matrix_stats(&ka).map_or(0.0, |st| st.sigma_max);
        let rhs = a.b.iter().chain(&a.d).map(|v| v * v).fold(0.0, |s, v| s + v).sqrt();
        m_y = m_y.max(smax * a.bounds.max_norm() + rhs);
        l_xy = l_xy.max(smax);
    }
    // without shared constraint rows ∇_x̃ g^k reduces to ∇_x̃ f^k
    let m_xt = shared_stats.map_or(grad_xt_bound, |st| st.chi * grad_xt_bound);

    let two_l = (2.0 * l).sqrt();
    let r_z = two_l * m_y / spectrum.lambda_min_pos;
    let r_zt = two_l * m_xt / spectrum.lambda_min_pos;

    let l_xx = spec.agents.iter().map(|a| a.lipschitz).fold(0.0, f64::max);
    let l_yy = 0.0;
    let r_x = spec.agents.iter().map(|a| a.bounds.diameter()).fold(0.0, f64::max);
    let r_xt = s.bounds.diameter();

    let r_primal = (r_x * r_x + r_xt * r_xt).sqrt();
    let r_dual = (r_y * r_y + r_yt * r_yt).sqrt();
    let kappa = spectrum.condition();
    let l_zeta = 2.0
        * (r_primal * r_primal * l_xx)
            .max(r_dual * r_dual * l_yy)
            .max(
                2f64.sqrt() * r_primal * r_dual * l_xy
                    + 2.0 * m_xt * r_primal * kappa
                    + 2.0 * m_y * r_dual * kappa,
            );
    // min-block (x, x̃, z) and max-block (y, ỹ, z̃) interact through
    // [[K, 0, W], [0, K̃, 0], [0, W̃, 0]], whose norm is at most √(L_xy² + λ_max²)
    let operator_lipschitz = l_xx + l_xy.hypot(spectrum.lambda_max);
    let step_size = if operator_lipschitz > 0.0 {
        1.0 / operator_lipschitz
    } else {
        1.0
    };

    Ok(ProblemConstants {
        r_y,
        r_yt,
        r_z,
        r_zt,
        m_y,
        m_xt,
        l_xx,
        l_xy,
        l_yx: l_xy,
        l_yy,
        r_x,
        r_xt,
        l_zeta,
        operator_lipschitz,
        step_size,
        grad_x_bound,
        grad_xt_bound,
        spectrum,
        sigma_min_coupled: coupled_stats.map(|s| s.sigma_min_pos),
        sigma_min_shared: shared_stats.map(|s| s.sigma_min_pos),
        capped,
    })
}

impl ProblemConstants {
    /// Radii of the six blocks of `ζ` in order `(x, x̃, y, ỹ, z, z̃)`.
    pub fn radii(&self) -> [f64; 6] {
        [self.r_x, self.r_xt, self.r_y, self.r_yt, self.r_z, self.r_zt]
    }

    /// Named values in a fixed order, for reports.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("R_x", self.r_x),
            ("R_xt", self.r_xt),
            ("R_y", self.r_y),
            ("R_yt", self.r_yt),
            ("R_z", self.r_z),
            ("R_zt", self.r_zt),
            ("M_y", self.m_y),
            ("M_xt", self.m_xt),
            ("L_xx", self.l_xx),
            ("L_xy", self.l_xy),
            ("L_yx", self.l_yx),
            ("L_yy", self.l_yy),
            ("L_zeta", self.l_zeta),
            ("max_grad_x", self.grad_x_bound),
            ("max_grad_xt", self.grad_xt_bound),
            ("lambda_max", self.spectrum.lambda_max),
            ("lambda_min_pos", self.spectrum.lambda_min_pos),
            ("operator_lipschitz", self.operator_lipschitz),
            ("step_size", self.step_size),
        ]
    }
}

/// `‖ζ‖² = Σ_blocks ‖block‖² / R_block²`; empty blocks are skipped.
pub fn weighted_norm(constants: &ProblemConstants, zeta: &IterateVector) -> Result<f64> {
    let names = ["x", "x̃", "y", "ỹ", "z", "z̃"];
    let mut acc = 0.0;
    for ((field, r), name) in zeta.fields().iter().zip(constants.radii()).zip(names) {
        if field.is_empty() {
            continue;
        }
        if !(r > 0.0) {
            return Err(Error::InvalidSpec(format!("radius of block {name} is zero")));
        }
        acc += field.iter().map(|v| v * v).fold(0.0, |s, v| s + v) / (r * r);
    }
    Ok(acc.sqrt())
}

/// Upper bounds on `max ‖∇_x f‖` and `max ‖∇_x̃ f‖` over the boxes.
fn gradient_bounds(spec: &ProblemSpec) -> (f64, f64) {
    let n = spec.private_dim();
    let nt = spec.shared.dim;
    if spec.all_quadratic() {
        // both gradients are affine in (x, x̃): assemble them jointly
        let mut gx = DMatrix::zeros(n, n + nt);
        let mut cx = vec![0.0; n];
        let mut gt = DMatrix::zeros(nt, n + nt);
        let mut ct = vec![0.0; nt];
        let off = spec.offsets();
        for (k, a) in spec.agents.iter().enumerate() {
            let q = a.objective.as_quadratic().expect("checked");
            let (hq, lin, nk) = (q.hessian(), q.linear(), a.dim);
            for i in 0..nk {
                for j in 0..nk {
                    gx[(off[k] + i, off[k] + j)] = hq[(i, j)];
                }
                for j in 0..nt {
                    gx[(off[k] + i, n + j)] = hq[(i, nk + j)];
                }
                cx[off[k] + i] = lin[i];
            }
            for i in 0..nt {
                for j in 0..nk {
                    gt[(i, off[k] + j)] = hq[(nk + i, j)];
                }
                for j in 0..nt {
                    gt[(i, n + j)] += hq[(nk + i, nk + j)];
                }
                ct[i] += lin[nk + i];
            }
        }
        let lower: Vec<f64> = spec
            .agents
            .iter()
            .flat_map(|a| a.bounds.lower().iter().copied())
            .chain(spec.shared.bounds.lower().iter().copied())
            .collect();
        let upper: Vec<f64> = spec
            .agents
            .iter()
            .flat_map(|a| a.bounds.upper().iter().copied())
            .chain(spec.shared.bounds.upper().iter().copied())
            .collect();
        (
            max_affine_norm(&gx, &cx, &lower, &upper),
            max_affine_norm(&gt, &ct, &lower, &upper),
        )
    } else {
        // ‖∇f^k(v)‖ ≤ ‖∇f^k(mid)‖ + L_k · ‖v − mid‖
        let mid_t = spec.shared.bounds.midpoint();
        let half_t = 0.5 * spec.shared.bounds.diameter();
        let mut sq = 0.0;
        let mut sum_t = 0.0;
        for a in &spec.agents {
            let mid = a.bounds.midpoint();
            let (mut g, mut gt) = (vec![0.0; a.dim], vec![0.0; nt]);
            a.objective.grad(&mid, &mid_t, &mut g, &mut gt);
            let half = (0.25 * a.bounds.diameter().powi(2) + half_t * half_t).sqrt();
            let slack = a.lipschitz * half;
            sq += (dense::norm(&g) + slack).powi(2);
            sum_t += dense::norm(&gt) + slack;
        }
        (sq.sqrt(), sum_t)
    }
}

/// `max_{lower ≤ v ≤ upper} ‖M v + c‖`, exact by corner enumeration when at
/// most 2^20 corners matter, otherwise a norm bound around the midpoint.
pub fn max_affine_norm(mat: &DMatrix<f64>, c: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let rows = mat.nrows();
    if rows == 0 {
        return 0.0;
    }
    let mid: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
    let free: Vec<usize> = (0..mat.ncols())
        .filter(|&j| upper[j] > lower[j] && mat.column(j).iter().any(|&v| v != 0.0))
        .collect();
    let mut r = c.to_vec();
    dense::gemv(1.0, mat, &mid, 1.0, &mut r);
    if free.len() > CORNER_LIMIT_LOG2 {
        let half: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect();
        let smax = matrix_stats(mat).map_or(0.0, |s| s.sigma_max);
        return dense::norm(&r) + smax * dense::norm(&half);
    }
    // start at the all-lower corner, then walk a Gray code
    let mut at_upper = vec![false; free.len()];
    for &j in &free {
        let delta = lower[j] - mid[j];
        for (ri, mv) in r.iter_mut().zip(mat.column(j).iter()) {
            *ri += mv * delta;
        }
    }
    let mut best = r.iter().map(|v| v * v).fold(0.0, |s, v| s + v);
    for step in 1u64..(1u64 << free.len()) {
        let bit = step.trailing_zeros() as usize;
        let j = free[bit];
        let delta = if at_upper[bit] {
            lower[j] - upper[j]
        } else {
            upper[j] - lower[j]
        };
        at_upper[bit] = !at_upper[bit];
        for (ri, mv) in r.iter_mut().zip(mat.column(j).iter()) {
            *ri += mv * delta;
        }
        best = best.max(r.iter().map(|v| v * v).fold(0.0, |s, v| s + v));
    }
    best.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{DirectCommunicator, Graph};
    use crate::problem::{LocalBlock, QuadraticObjective, SharedBlock};

    fn two_scalar(a_coef: f64, b: f64, center: f64, c_rows: usize) -> ProblemSpec {
        let agent = || {
            let obj = QuadraticObjective::separable(1, &[1.0], &[center]).unwrap();
            LocalBlock::new(Arc::new(obj), BoxSet::uniform(1, -3.0, 3.0).unwrap(), 1.0)
                .with_equalities(DMatrix::from_element(1, 1, a_coef), vec![b])
                .with_inequalities(DMatrix::from_element(c_rows, 1, 1.0), vec![0.5; c_rows])
        };
        ProblemSpec::new(vec![agent(), agent()], SharedBlock::none(), Graph::complete(2)).unwrap()
    }

    #[test]
    fn lagrangian_with_zero_duals_is_objective() {
        let spec = two_scalar(1.0, 1.0, 0.5, 1);
        let f = spec.agents[0].objective.eval(&[2.0], &[]);
        let g = local_lagrangian(&spec, 0, &[2.0], &[], &[0.0, 0.0], &[]).unwrap();
        assert_eq!(f, g);
        assert!(local_lagrangian(&spec, 0, &[2.0], &[], &[0.0], &[]).is_err());
    }

    #[test]
    fn lagrangian_at_feasible_point_with_zero_objective() {
        let zero = QuadraticObjective::new(1, DMatrix::zeros(1, 1), vec![0.0], 0.0).unwrap();
        let agent = LocalBlock::new(Arc::new(zero), BoxSet::uniform(1, -3.0, 3.0).unwrap(), 0.0)
            .with_equalities(DMatrix::from_element(1, 1, 2.0), vec![1.0])
            .with_inequalities(DMatrix::from_element(1, 1, 1.0), vec![0.5]);
        let spec = ProblemSpec::new(vec![agent.clone(), agent], SharedBlock::none(), Graph::complete(2))
            .unwrap();
        let g = local_lagrangian(&spec, 1, &[0.5], &[], &[3.0, 7.0], &[]).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn field_vanishes_at_zero_stationary_point() {
        let spec = two_scalar(1.0, 0.0, 0.0, 1);
        let spec = {
            let mut s = spec;
            for a in &mut s.agents {
                a.d = vec![0.0];
            }
            s
        };
        let op = SaddleOperator::new(&spec).unwrap();
        let zero = IterateVector::zeros(op.layout());
        let f = op.eval(&DirectCommunicator, &zero).unwrap();
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn consensus_feasible_point_has_zero_consensus_field() {
        let spec = two_scalar(1.0, 0.3, 0.2, 1);
        let op = SaddleOperator::new(&spec).unwrap();
        let mut zeta = IterateVector::initial(&spec);
        zeta.x = vec![0.4, -0.7];
        zeta.y = vec![1.5, 0.2, 1.5, 0.2];
        zeta.z = vec![-0.3, 0.9, -0.3, 0.9];
        let f = op.eval(&DirectCommunicator, &zeta).unwrap();
        assert!(f.z.iter().all(|&v| v == 0.0));
        assert!(f.zt.is_empty());
    }

    #[test]
    fn projection_examples() {
        let spec = two_scalar(1.0, 0.3, 0.2, 1);
        let mut zeta = IterateVector::initial(&spec);
        zeta.x = vec![1.0, 5.0];
        zeta.y = vec![-1.0, -1.0, 2.0, 0.5];
        let p = project(&spec, &zeta).unwrap();
        assert_eq!(p.x, vec![1.0, 3.0]);
        // λ untouched, μ clipped at zero
        assert_eq!(p.y, vec![-1.0, 0.0, 2.0, 0.5]);
        assert_eq!(project(&spec, &p).unwrap(), p);
    }

    #[test]
    fn constants_single_equality_row() {
        // A = (1 … 1), so σ_min^+ of the stacked constraint matrix is √l
        let spec = two_scalar(1.0, 0.0, 0.5, 0);
        let c = compute_constants(&spec).unwrap();
        assert_eq!(c.l_yy, 0.0);
        assert_eq!(c.l_xy, c.l_yx);
        assert!((c.sigma_min_coupled.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        // ∇_x f = x − 0.5 on [−3, 3]²: max at (−3, −3) → ‖(−3.5, −3.5)‖
        let gmax = 3.5 * 2f64.sqrt();
        assert!((c.grad_x_bound - gmax).abs() < 1e-12);
        assert!((c.r_y - 2f64.sqrt() * gmax / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(c.l_xx, 1.0);
        assert_eq!(c.r_yt, 0.0);
    }

    #[test]
    fn weighted_norm_examples() {
        let spec = two_scalar(1.0, 0.0, 0.5, 0);
        let c = compute_constants(&spec).unwrap();
        let mut zeta = IterateVector::zeros(&Layout::of(&spec));
        assert_eq!(weighted_norm(&c, &zeta).unwrap(), 0.0);
        zeta.x = vec![c.r_x, 0.0];
        assert!((weighted_norm(&c, &zeta).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn affine_norm_corner_enumeration() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let v = max_affine_norm(&m, &[0.5, 0.0], &[-1.0, -1.0], &[1.0, 1.0]);
        assert!((v - (1.5f64 * 1.5 + 4.0).sqrt()).abs() < 1e-14);
    }
}
