//! Communication graph, Laplacian-type communication matrices and their
//! Kronecker lifts `W ⊗ I_d`.
//!
//! Multiplication by a lifted matrix is the only way agents exchange data:
//! block `i` of `(W ⊗ I_d) v` is assembled from blocks `j` with `W[i][j] != 0`,
//! i.e. from node `i` itself and its graph neighbors.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dense;
use crate::error::{Error, Result};

/// Relative threshold separating zero from positive eigenvalues.
pub const SPECTRAL_RTOL: f64 = 1e-9;

/// Undirected graph over nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph and checks that it is connected.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let g = Self::from_edge_list(node_count, edges)?;
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    /// Builds a graph without the connectivity check. Self-loops and
    /// out-of-range endpoints are still rejected; duplicate edges collapse.
    pub fn from_edge_list(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidSpec("graph must have at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= node_count || j >= node_count {
                return Err(Error::InvalidSpec(format!(
                    "edge ({i}, {j}) out of range for {node_count} nodes"
                )));
            }
            if i == j {
                return Err(Error::InvalidSpec(format!("self-loop at node {i}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self {
            node_count,
            edges: set,
        })
    }

    pub fn complete(node_count: usize) -> Self {
        let edges: Vec<_> = (0..node_count)
            .flat_map(|i| (i + 1..node_count).map(move |j| (i, j)))
            .collect();
        Self::from_edge_list(node_count, &edges).expect("complete graph is well formed")
    }

    pub fn path(node_count: usize) -> Self {
        let edges: Vec<_> = (1..node_count).map(|i| (i - 1, i)).collect();
        Self::from_edge_list(node_count, &edges).expect("path graph is well formed")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Neighbors of `i` in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == i || b == i).count()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub lambda_max: f64,
    pub lambda_min_pos: f64,
}

impl Spectrum {
    /// `lambda_max / lambda_min_pos`
    pub fn condition(&self) -> f64 {
        self.lambda_max / self.lambda_min_pos
    }
}

/// Symmetric PSD matrix compatible with a graph, lifted to blocks of
/// dimension `block_dim`.
#[derive(Debug, Clone)]
pub struct CommunicationMatrix {
    graph: Graph,
    base: DMatrix<f64>,
    block_dim: usize,
    // nonzero entries of each row, ascending column index (diagonal included)
    rows: Vec<Vec<(usize, f64)>>,
    spectrum: Spectrum,
}

/// Unnormalized graph Laplacian with `block_dim = 1`.
pub fn laplacian(graph: &Graph) -> Result<CommunicationMatrix> {
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let l = graph.node_count();
    let mut base = DMatrix::zeros(l, l);
    for (i, j) in graph.edges() {
        base[(i, j)] = -1.0;
        base[(j, i)] = -1.0;
        base[(i, i)] += 1.0;
        base[(j, j)] += 1.0;
    }
    CommunicationMatrix::from_parts(graph.clone(), base, 1)
}

impl CommunicationMatrix {
    /// Accepts any symmetric PSD matrix that is zero off the graph's edges
    /// and whose kernel is exactly the constant vectors (e.g. a weighted
    /// Laplacian).
    pub fn weighted(graph: &Graph, base: DMatrix<f64>) -> Result<Self> {
        let l = graph.node_count();
        if base.nrows() != l || base.ncols() != l {
            return Err(Error::dim("communication matrix", l, base.nrows()));
        }
        for i in 0..l {
            for j in 0..l {
                if (base[(i, j)] - base[(j, i)]).abs() > 1e-12 * (1.0 + base[(i, j)].abs()) {
                    return Err(Error::InvalidSpec("communication matrix not symmetric".into()));
                }
                if i != j && base[(i, j)] != 0.0 && !graph.has_edge(i, j) {
                    return Err(Error::InvalidSpec(format!(
                        "entry ({i}, {j}) is nonzero but nodes are not adjacent"
                    )));
                }
            }
        }
        let row_sum = base.column_sum().norm();
        if row_sum > 1e-9 * (1.0 + base.norm()) {
            return Err(Error::InvalidSpec("constant vector not in kernel".into()));
        }
        Self::from_parts(graph.clone(), base, 1)
    }

    fn from_parts(graph: Graph, base: DMatrix<f64>, block_dim: usize) -> Result<Self> {
        let spectrum = base_spectrum(&base)?;
        let l = base.nrows();
        let rows = (0..l)
            .map(|i| {
                (0..l)
                    .filter(|&j| base[(i, j)] != 0.0)
                    .map(|j| (j, base[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self {
            graph,
            base,
            block_dim,
            rows,
            spectrum,
        })
    }

    /// The same base matrix lifted to blocks of dimension `block_dim`.
    pub fn lift(&self, block_dim: usize) -> Self {
        Self {
            block_dim,
            ..self.clone()
        }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    pub fn node_count(&self) -> usize {
        self.base.nrows()
    }

    /// Length of vectors the lifted matrix acts on.
    pub fn lifted_len(&self) -> usize {
        self.node_count() * self.block_dim
    }

    /// λ_max and λ_min^+ of the base matrix; identical for every lift.
    pub fn spectral(&self) -> Spectrum {
        self.spectrum
    }

    pub fn lifted_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.lifted_len() {
            return Err(Error::dim("lifted matvec input", self.lifted_len(), v.len()));
        }
        let mut out = vec![0.0; v.len()];
        self.lifted_matvec_observed(v, &mut out, |_, _| {});
        Ok(out)
    }

    /// Computes `(W ⊗ I_d) v` into `out`, calling `on_read(i, j)` each time
    /// block `j` of `v` is read while assembling block `i` of the output.
    pub fn lifted_matvec_observed<F: FnMut(usize, usize)>(
        &self,
        v: &[f64],
        out: &mut [f64],
        mut on_read: F,
    ) {
        let d = self.block_dim;
        debug_assert_eq!(v.len(), self.lifted_len());
        debug_assert_eq!(out.len(), self.lifted_len());
        if d == 0 {
            return;
        }
        for (i, row) in self.rows.iter().enumerate() {
            let oi = &mut out[i * d..(i + 1) * d];
            oi.fill(0.0);
            for &(j, w) in row {
                on_read(i, j);
                let vj = &v[j * d..(j + 1) * d];
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
    }

    /// Parallel over output blocks. Each block uses the same ascending
    /// neighbor order as the sequential kernel, so results are bitwise equal.
    pub fn lifted_matvec_par(&self, v: &[f64], out: &mut [f64]) {
        let d = self.block_dim;
        if d == 0 {
            return;
        }
        out.par_chunks_mut(d).enumerate().for_each(|(i, oi)| {
            oi.fill(0.0);
            for &(j, w) in &self.rows[i] {
                let vj = &v[j * d..(j + 1) * d];
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        });
    }

    /// Explicit `W ⊗ I_d`; only for checks and small instances.
    pub fn dense_lifted(&self) -> DMatrix<f64> {
        let d = self.block_dim;
        let l = self.node_count();
        let mut out = DMatrix::zeros(l * d, l * d);
        for i in 0..l {
            for j in 0..l {
                for r in 0..d {
                    out[(i * d + r, j * d + r)] = self.base[(i, j)];
                }
            }
        }
        out
    }
}

fn base_spectrum(base: &DMatrix<f64>) -> Result<Spectrum> {
    let ev = dense::sym_eigenvalues(base);
    let lambda_max = *ev.last().unwrap_or(&0.0);
    if ev.len() == 1 {
        // single node: W = 0, nothing to communicate
        return Ok(Spectrum {
            lambda_max: 0.0,
            lambda_min_pos: 0.0,
        });
    }
    if lambda_max <= 0.0 {
        return Err(Error::Disconnected);
    }
    let tol = SPECTRAL_RTOL * lambda_max;
    if ev[0] < -tol {
        return Err(Error::InvalidSpec(format!(
            "communication matrix not PSD (eigenvalue {:.3e})",
            ev[0]
        )));
    }
    let zeros = ev.iter().filter(|&&e| e <= tol).count();
    if zeros != 1 {
        // kernel larger than span{1}
        return Err(Error::Disconnected);
    }
    Ok(Spectrum {
        lambda_max,
        lambda_min_pos: ev[1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixStats {
    pub sigma_max: f64,
    pub sigma_min_pos: f64,
    pub chi: f64,
}

/// Largest and smallest positive singular values and their ratio.
pub fn matrix_stats(a: &DMatrix<f64>) -> Result<MatrixStats> {
    if a.is_empty() {
        return Err(Error::ZeroMatrix);
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let ev = dense::sym_eigenvalues(&gram);
    let lmax = *ev.last().expect("nonempty");
    if lmax <= 0.0 {
        return Err(Error::ZeroMatrix);
    }
    // rank cutoff on singular values, i.e. squared on eigenvalues of the Gram matrix
    let tol = lmax * SPECTRAL_RTOL * SPECTRAL_RTOL;
    let lmin = ev.iter().copied().find(|&e| e > tol).expect("lmax qualifies");
    let sigma_max = lmax.sqrt();
    let sigma_min_pos = lmin.sqrt();
    Ok(MatrixStats {
        sigma_max,
        sigma_min_pos,
        chi: sigma_max / sigma_min_pos,
    })
}

/// Routes the solver's neighbor exchanges. The default implementation
/// forwards to [`CommunicationMatrix::lifted_matvec_observed`].
pub trait Communicator: Sync {
    fn exchange(&self, w: &CommunicationMatrix, v: &[f64], out: &mut [f64]);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DirectCommunicator;

impl Communicator for DirectCommunicator {
    fn exchange(&self, w: &CommunicationMatrix, v: &[f64], out: &mut [f64]) {
        w.lifted_matvec_observed(v, out, |_, _| {});
    }
}

/// Evaluates output blocks on the rayon pool.
#[derive(Debug, Default, Clone, Copy)]
pub struct ParallelCommunicator;

impl Communicator for ParallelCommunicator {
    fn exchange(&self, w: &CommunicationMatrix, v: &[f64], out: &mut [f64]) {
        w.lifted_matvec_par(v, out);
    }
}

/// Instrumented communicator that counts base-matrix applications and
/// records every block read, flagging reads between non-adjacent nodes.
#[derive(Debug, Default)]
pub struct SpyCommunicator {
    applications: AtomicUsize,
    reads: AtomicUsize,
    nonlocal_reads: AtomicUsize,
}

impl SpyCommunicator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn applications(&self) -> usize {
        self.applications.load(Ordering::Relaxed)
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn nonlocal_reads(&self) -> usize {
        self.nonlocal_reads.load(Ordering::Relaxed)
    }
}

impl Communicator for SpyCommunicator {
    fn exchange(&self, w: &CommunicationMatrix, v: &[f64], out: &mut [f64]) {
        self.applications.fetch_add(1, Ordering::Relaxed);
        let graph = w.graph();
        let mut reads = 0usize;
        let mut nonlocal = 0usize;
        w.lifted_matvec_observed(v, out, |i, j| {
            reads += 1;
            if i != j && !graph.has_edge(i, j) {
                nonlocal += 1;
            }
        });
        self.reads.fetch_add(reads, Ordering::Relaxed);
        self.nonlocal_reads.fetch_add(nonlocal, Ordering::Relaxed);
    }
}
