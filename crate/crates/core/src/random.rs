//! Seeded generator of feasible desk-scale instances with strongly convex
//! quadratic objectives and random connected graphs.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::problem::{BoxSet, LocalBlock, ProblemSpec, QuadraticObjective, SharedBlock};

/// Size ranges (inclusive) for generated instances.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomParams {
    pub agents: (usize, usize),
    pub private_dim: (usize, usize),
    pub eq_rows: (usize, usize),
    pub ineq_rows: (usize, usize),
    pub shared_dim: (usize, usize),
    /// Probability of each non-tree edge.
    pub edge_prob: f64,
}

impl Default for RandomParams {
    fn default() -> Self {
        Self {
            agents: (2, 6),
            private_dim: (1, 3),
            eq_rows: (1, 3),
            ineq_rows: (0, 3),
            shared_dim: (0, 2),
            edge_prob: 0.3,
        }
    }
}

fn pick(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

/// Random connected graph: a random spanning tree plus extra edges.
pub fn random_graph(rng: &mut ChaCha8Rng, nodes: usize, edge_prob: f64) -> Graph {
    let mut edges = Vec::new();
    for v in 1..nodes {
        let u = rng.random_range(0..v);
        edges.push((u, v));
    }
    for i in 0..nodes {
        for j in i + 1..nodes {
            if rng.random_bool(edge_prob) {
                edges.push((i, j));
            }
        }
    }
    Graph::new(nodes, &edges).expect("spanning tree keeps the graph connected")
}

fn quadratic(rng: &mut ChaCha8Rng, private: usize, shared: usize) -> QuadraticObjective {
    let n = private + shared;
    let m = uniform_matrix(rng, n, n, 1.0);
    let shift = rng.random_range(0.2..=1.0);
    let q = (m.transpose() * &m) / n as f64 + DMatrix::identity(n, n) * shift;
    let q = (&q + q.transpose()) * 0.5;
    let lin = (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect();
    QuadraticObjective::new(private, q, lin, 0.0).expect("positive definite by construction")
}

/// A feasible instance: a strictly interior point satisfies all inequalities
/// and the equalities hold exactly at it.
pub fn random_instance(seed: u64, params: &RandomParams) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = pick(&mut rng, params.agents);
    let m = pick(&mut rng, params.eq_rows);
    let h = pick(&mut rng, params.ineq_rows);
    let nt = pick(&mut rng, params.shared_dim);
    let (sm, sh) = if nt > 0 {
        (rng.random_range(0..nt), rng.random_range(0..=1))
    } else {
        (0, 0)
    };

    let draw_box = |rng: &mut ChaCha8Rng, dim: usize| {
        let lower: Vec<f64> = (0..dim).map(|_| -rng.random_range(1.0..=2.0)).collect();
        let upper: Vec<f64> = (0..dim).map(|_| rng.random_range(1.0..=2.0)).collect();
        BoxSet::new(lower, upper).expect("finite ordered bounds")
    };
    let shared_box = draw_box(&mut rng, nt);
    let xt_feas: Vec<f64> = shared_box
        .lower()
        .iter()
        .zip(shared_box.upper())
        .map(|(l, u)| 0.5 * rng.random_range(*l..=*u))
        .collect();

    let graph = random_graph(&mut rng, l, params.edge_prob);
    let ineq_slack: Vec<f64> = (0..h).map(|_| rng.random_range(0.1..=0.5)).collect();
    let mut eq_shift: Vec<Vec<f64>> = (0..l)
        .map(|_| (0..m).map(|_| rng.random_range(-0.3..=0.3)).collect())
        .collect();
    // shifts sum to zero so the feasible point stays feasible
    for r in 0..m {
        let mean = eq_shift.iter().map(|s| s[r]).sum::<f64>() / l as f64;
        eq_shift.iter_mut().for_each(|s| s[r] -= mean);
    }

    let mut agents = Vec::with_capacity(l);
    for shift in eq_shift.iter() {
        let nk = pick(&mut rng, params.private_dim);
        let bounds = draw_box(&mut rng, nk);
        let feas: Vec<f64> = bounds
            .lower()
            .iter()
            .zip(bounds.upper())
            .map(|(l, u)| 0.5 * rng.random_range(*l..=*u))
            .collect();
        let obj = quadratic(&mut rng, nk, nt);
        let lip = obj.lipschitz();
        let a = uniform_matrix(&mut rng, m, nk, 1.0);
        let c = uniform_matrix(&mut rng, h, nk, 1.0);
        let ax = &a * nalgebra::DVector::from_row_slice(&feas);
        let cx = &c * nalgebra::DVector::from_row_slice(&feas);
        let b: Vec<f64> = (0..m).map(|r| ax[r] + shift[r]).collect();
        let d: Vec<f64> = (0..h).map(|r| cx[r] + ineq_slack[r] / l as f64).collect();
        agents.push(
            LocalBlock::new(Arc::new(obj), bounds, lip)
                .with_equalities(a, b)
                .with_inequalities(c, d),
        );
    }

    let sa = uniform_matrix(&mut rng, sm, nt, 1.0);
    let sc = uniform_matrix(&mut rng, sh, nt, 1.0);
    let xt = nalgebra::DVector::from_row_slice(&xt_feas);
    let sb: Vec<f64> = (&sa * &xt).iter().copied().collect();
    let sd: Vec<f64> = (&sc * &xt).iter().map(|v| v + rng.random_range(0.1..=0.5)).collect();
    let shared = SharedBlock {
        dim: nt,
        a: sa,
        b: sb,
        c: sc,
        d: sd,
        bounds: shared_box,
    };
    ProblemSpec::new(agents, shared, graph).expect("generated instance is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate;

    #[test]
    fn generated_instances_are_valid_and_deterministic() {
        let p = RandomParams::default();
        for seed in 0..20 {
            let s = random_instance(seed, &p);
            assert!(validate(&s).is_empty());
            assert!((2..=6).contains(&s.agent_count()));
            let again = random_instance(seed, &p);
            assert_eq!(s.stacked_a(), again.stacked_a());
        }
    }
}
