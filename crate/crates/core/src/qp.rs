//! Dense convex quadratic programming with a primal active-set method.
//!
//! Solves `min ½ vᵀHv + cᵀv  s.t.  E v = e,  G v ≤ g` for symmetric positive
//! semidefinite `H`. A feasible start is found by a phase-one linear program
//! over artificial variables; the second phase moves within the null space of
//! the working set and follows zero-curvature descent directions when the
//! reduced Hessian is singular.

use nalgebra::{DMatrix, DVector};

use crate::dense;
use crate::error::{Error, Result};

/// `min ½ vᵀHv + cᵀv  s.t.  E v = e,  G v ≤ g`.
#[derive(Debug, Clone)]
pub struct QuadProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub max_iters: usize,
    /// Relative rank cutoff for working-set factorizations.
    pub rank_tol: f64,
    /// Phase-one residual above which the constraints count as inconsistent.
    pub feas_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            rank_tol: 1e-10,
            feas_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Multipliers of the inequality rows (zero for rows outside the final
    /// working set).
    pub ineq_multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QuadProgram {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.hessian * v)) + self.linear.dot(v)
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        let shape = |ctx: &str, m: &DMatrix<f64>, rows: usize, cols: usize| {
            if m.nrows() != rows {
                Err(Error::dim(format!("{ctx} rows"), rows, m.nrows()))
            } else if m.ncols() != cols {
                Err(Error::dim(format!("{ctx} columns"), cols, m.ncols()))
            } else {
                Ok(())
            }
        };
        shape("hessian", &self.hessian, n, n)?;
        shape("equality matrix", &self.eq, self.eq_rhs.len(), n)?;
        shape("inequality matrix", &self.ineq, self.ineq_rhs.len(), n)
    }

    /// Solves the program starting the phase-one search from `start`.
    pub fn solve(&self, start: &DVector<f64>, opts: &QpOptions) -> Result<QpSolution> {
        self.check()?;
        if start.len() != self.dim() {
            return Err(Error::dim("qp start", self.dim(), start.len()));
        }
        let (feasible, it1) = self.phase_one(start, opts)?;
        let mut ws = ActiveSet::new(
            &self.hessian,
            &self.linear,
            &self.eq,
            &self.ineq,
            &self.ineq_rhs,
            opts,
        );
        let (x, mult, it2) = ws.run(feasible)?;
        Ok(QpSolution {
            objective: self.objective(&x),
            x,
            ineq_multipliers: mult,
            iterations: it1 + it2,
        })
    }

    /// Minimizes the total artificial slack over `(v, s⁺, s⁻, t)` with
    /// `E v + s⁺ − s⁻ = e`, `G v − t ≤ g` and nonnegative artificials.
    fn phase_one(&self, start: &DVector<f64>, opts: &QpOptions) -> Result<(DVector<f64>, usize)> {
        let n = self.dim();
        let me = self.eq_rhs.len();
        let mi = self.ineq_rhs.len();
        let eq_res = &self.eq * start - &self.eq_rhs;
        let in_res = &self.ineq * start - &self.ineq_rhs;
        if eq_res.iter().all(|r| r.abs() == 0.0) && in_res.iter().all(|r| *r <= 0.0) {
            return Ok((start.clone(), 0));
        }

        let total = n + 2 * me + mi;
        let mut eq = DMatrix::zeros(me, total);
        eq.view_mut((0, 0), (me, n)).copy_from(&self.eq);
        for r in 0..me {
            eq[(r, n + r)] = 1.0;
            eq[(r, n + me + r)] = -1.0;
        }
        let art = 2 * me + mi;
        let mut ineq = DMatrix::zeros(mi + art, total);
        ineq.view_mut((0, 0), (mi, n)).copy_from(&self.ineq);
        for r in 0..mi {
            ineq[(r, n + 2 * me + r)] = -1.0;
        }
        for a in 0..art {
            ineq[(mi + a, n + a)] = -1.0;
        }
        let mut rhs = DVector::zeros(mi + art);
        rhs.rows_mut(0, mi).copy_from(&self.ineq_rhs);

        let mut w = DVector::zeros(total);
        w.rows_mut(0, n).copy_from(start);
        for r in 0..me {
            w[n + r] = (-eq_res[r]).max(0.0);
            w[n + me + r] = eq_res[r].max(0.0);
        }
        for r in 0..mi {
            w[n + 2 * me + r] = in_res[r].max(0.0);
        }
        let mut cost = DVector::zeros(total);
        cost.rows_mut(n, art).fill(1.0);
        let hess = DMatrix::zeros(total, total);

        let mut ws = ActiveSet::new(&hess, &cost, &eq, &ineq, &rhs, opts);
        let (w, _, iters) = ws.run(w)?;
        let slack: f64 = w.rows(n, art).iter().map(|v| v.abs()).sum();
        let scale = 1.0
            + self.eq_rhs.amax()
            + self.ineq_rhs.amax()
            + self.eq.amax().max(self.ineq.amax()) * start.amax();
        if slack > opts.feas_tol * scale {
            return Err(Error::Infeasible(slack));
        }
        Ok((w.rows(0, n).into_owned(), iters))
    }
}

struct ActiveSet<'a> {
    hessian: &'a DMatrix<f64>,
    linear: &'a DVector<f64>,
    eq: &'a DMatrix<f64>,
    ineq: &'a DMatrix<f64>,
    ineq_rhs: &'a DVector<f64>,
    opts: &'a QpOptions,
    working: Vec<usize>,
}

impl<'a> ActiveSet<'a> {
    fn new(
        hessian: &'a DMatrix<f64>,
        linear: &'a DVector<f64>,
        eq: &'a DMatrix<f64>,
        ineq: &'a DMatrix<f64>,
        ineq_rhs: &'a DVector<f64>,
        opts: &'a QpOptions,
    ) -> Self {
        Self {
            hessian,
            linear,
            eq,
            ineq,
            ineq_rhs,
            opts,
            working: Vec::new(),
        }
    }

    fn working_matrix(&self) -> DMatrix<f64> {
        let n = self.linear.len();
        let me = self.eq.nrows();
        let mut a = DMatrix::zeros(me + self.working.len(), n);
        a.view_mut((0, 0), (me, n)).copy_from(self.eq);
        for (r, &i) in self.working.iter().enumerate() {
            a.set_row(me + r, &self.ineq.row(i));
        }
        a
    }

    fn run(&mut self, mut v: DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, usize)> {
        let n = v.len();
        let scale = 1.0 + self.hessian.amax() + self.linear.amax();
        for iter in 0..self.opts.max_iters {
            let grad = self.hessian * &v + self.linear;
            let a_w = self.working_matrix();
            let z = dense::null_space(&a_w, n, self.opts.rank_tol);
            let gtol = 1e-11 * scale * (1.0 + v.amax());

            let mut direction = None;
            if z.ncols() > 0 {
                let rg = z.transpose() * &grad;
                if rg.norm() > gtol {
                    let rh = z.transpose() * self.hessian * &z;
                    let u = dense::lstsq_min_norm(&rh, &(-&rg), self.opts.rank_tol);
                    let kernel_part = &rh * &u + &rg;
                    direction = Some(if kernel_part.norm() <= gtol {
                        (&z * u, 1.0)
                    } else {
                        // zero-curvature descent: unbounded along the model
                        (-(&z * kernel_part), f64::INFINITY)
                    });
                }
            }

            match direction {
                Some((p, full)) => {
                    let (alpha, block) = self.ratio_test(&v, &p);
                    if alpha >= full {
                        if full.is_infinite() {
                            return Err(Error::InvalidSpec(
                                "quadratic program is unbounded below".into(),
                            ));
                        }
                        v += p;
                    } else {
                        v += p * alpha;
                        self.working.push(block.expect("finite ratio has a row"));
                    }
                }
                None => {
                    let lam = dense::lstsq_min_norm(&a_w.transpose(), &(-&grad), self.opts.rank_tol);
                    let me = self.eq.nrows();
                    let dual_tol = 1e-10 * scale;
                    let worst = self
                        .working
                        .iter()
                        .enumerate()
                        .map(|(r, &i)| (lam[me + r], i, r))
                        .filter(|(l, _, _)| *l < -dual_tol)
                        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    match worst {
                        Some((_, _, r)) => {
                            self.working.remove(r);
                        }
                        None => {
                            let mut mult = DVector::zeros(self.ineq.nrows());
                            for (r, &i) in self.working.iter().enumerate() {
                                mult[i] = lam[me + r].max(0.0);
                            }
                            return Ok((v, mult, iter + 1));
                        }
                    }
                }
            }
        }
        Err(Error::NoConvergence(self.opts.max_iters))
    }

    /// Largest step along `p` keeping rows outside the working set satisfied,
    /// and the first row that blocks it (smallest index on ties).
    fn ratio_test(&self, v: &DVector<f64>, p: &DVector<f64>) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        let pn = p.norm();
        for i in 0..self.ineq.nrows() {
            if self.working.contains(&i) {
                continue;
            }
            let row = self.ineq.row(i);
            let ap = row.dot(&p.transpose());
            if ap <= 1e-12 * row.norm() * pn {
                continue;
            }
            let slack = self.ineq_rhs[i] - row.dot(&v.transpose());
            let alpha = (slack / ap).max(0.0);
            if alpha < best.0 {
                best = (alpha, Some(i));
            }
        }
        best
    }
}
