//! DC optimal power flow as a decentralized instance.
//!
//! Every bus is an agent owning the outputs of its generators and its voltage
//! angle. Power balance at each bus is a coupled equality row and each line
//! contributes two coupled inequality rows bounding the flow in both
//! directions. Flows follow the lossless DC convention
//! `flow_ij = B_ij (θ_i − θ_j)`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::problem::{BoxSet, LocalBlock, ProblemSpec, QuadraticObjective, SharedBlock};
use crate::solver::SolverOutput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: i64,
    /// MW
    pub demand: f64,
    /// rad
    pub theta_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: i64,
    pub p_min: f64,
    pub p_max: f64,
    /// `[c₂, c₁, c₀]` of `c₂ p² + c₁ p + c₀`
    pub cost: [f64; 3],
}

impl Generator {
    pub fn cost_at(&self, p: f64) -> f64 {
        let [c2, c1, c0] = self.cost;
        c2 * p * p + c1 * p + c0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: i64,
    pub to: i64,
    pub susceptance: f64,
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcOpfInstance {
    #[serde(default)]
    pub name: String,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
}

/// Where each generator and angle lives in the stacked private vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableMap {
    /// Global index of each generator's output, in instance order.
    pub generator: Vec<usize>,
    /// Global index of each bus angle, in bus order.
    pub theta: Vec<usize>,
}

impl DcOpfInstance {
    fn bus_index(&self) -> HashMap<i64, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    /// Describes every broken invariant; empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.buses.len() < 2 {
            out.push("at least two buses are required".into());
        }
        let index = self.bus_index();
        if index.len() != self.buses.len() {
            out.push("bus ids are not unique".into());
        }
        for b in &self.buses {
            if !(b.demand >= 0.0 && b.demand.is_finite()) {
                out.push(format!("bus {}: demand must be finite and nonnegative", b.id));
            }
            if !(b.theta_max > 0.0 && b.theta_max.is_finite()) {
                out.push(format!("bus {}: theta_max must be finite and positive", b.id));
            }
        }
        for (i, g) in self.generators.iter().enumerate() {
            if !index.contains_key(&g.bus) {
                out.push(format!("generator {i}: unknown bus {}", g.bus));
            }
            if !(g.p_min.is_finite() && g.p_max.is_finite() && g.p_min <= g.p_max) {
                out.push(format!("generator {i}: need finite p_min <= p_max"));
            }
            if g.cost.iter().any(|c| !c.is_finite()) || g.cost[0] < 0.0 {
                out.push(format!("generator {i}: cost must be finite with c2 >= 0"));
            }
        }
        let mut edges = Vec::new();
        for (i, l) in self.lines.iter().enumerate() {
            match (index.get(&l.from), index.get(&l.to)) {
                (Some(&a), Some(&b)) if a != b => edges.push((a, b)),
                (Some(_), Some(_)) => out.push(format!("line {i}: endpoints coincide")),
                _ => out.push(format!("line {i}: unknown endpoint")),
            }
            if !(l.susceptance > 0.0 && l.susceptance.is_finite()) {
                out.push(format!("line {i}: susceptance must be finite and positive"));
            }
            if !(l.f_max > 0.0 && l.f_max.is_finite()) {
                out.push(format!("line {i}: f_max must be finite and positive"));
            }
        }
        if out.is_empty() {
            let connected = Graph::from_edge_list(self.buses.len(), &edges)
                .map(|g| g.is_connected())
                .unwrap_or(false);
            if !connected {
                out.push("network is not connected".into());
            }
            let capacity: f64 = self.generators.iter().map(|g| g.p_max).sum();
            if capacity < self.total_demand() {
                out.push(format!(
                    "generation capacity {capacity} is below total demand {}",
                    self.total_demand()
                ));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(v.join("; ")))
        }
    }

    pub fn total_demand(&self) -> f64 {
        self.buses.iter().map(|b| b.demand).sum()
    }

    /// Generators of each bus, in instance order.
    fn generators_by_bus(&self) -> Vec<Vec<usize>> {
        let index = self.bus_index();
        let mut out = vec![Vec::new(); self.buses.len()];
        for (g, gen) in self.generators.iter().enumerate() {
            out[index[&gen.bus]].push(g);
        }
        out
    }

    /// Line endpoints as bus positions.
    fn line_ends(&self) -> Vec<(usize, usize)> {
        let index = self.bus_index();
        self.lines.iter().map(|l| (index[&l.from], index[&l.to])).collect()
    }

    /// Agent `k` stores its generators' outputs first, then `θ_k`.
    pub fn variable_map(&self) -> VariableMap {
        let mut generator = vec![0; self.generators.len()];
        let mut theta = Vec::with_capacity(self.buses.len());
        let mut pos = 0;
        for gens in self.generators_by_bus() {
            for g in gens {
                generator[g] = pos;
                pos += 1;
            }
            theta.push(pos);
            pos += 1;
        }
        VariableMap { generator, theta }
    }
}

/// Builds the decentralized instance. With `pin_slack`, the first bus's angle
/// box collapses to `[0, 0]`, removing the angle-shift degeneracy.
pub fn to_problem_spec(inst: &DcOpfInstance, pin_slack: bool) -> Result<ProblemSpec> {
    inst.validate()?;
    let l = inst.buses.len();
    let by_bus = inst.generators_by_bus();
    let ends = inst.line_ends();
    let rows_ineq = 2 * ends.len();

    let mut agents = Vec::with_capacity(l);
    for (k, bus) in inst.buses.iter().enumerate() {
        let gens = &by_bus[k];
        let dim = gens.len() + 1;
        let th = gens.len();

        let mut q = DMatrix::zeros(dim, dim);
        let mut lin = vec![0.0; dim];
        let mut constant = 0.0;
        for (j, &g) in gens.iter().enumerate() {
            let [c2, c1, c0] = inst.generators[g].cost;
            q[(j, j)] = 2.0 * c2;
            lin[j] = c1;
            constant += c0;
        }
        let obj = QuadraticObjective::new(dim, q, lin, constant)?;
        let lip = obj.lipschitz();

        let mut a = DMatrix::zeros(l, dim);
        for j in 0..gens.len() {
            a[(k, j)] = 1.0;
        }
        let mut c = DMatrix::zeros(rows_ineq, dim);
        let mut d = vec![0.0; rows_ineq];
        for (e, (&(i, j), line)) in ends.iter().zip(&inst.lines).enumerate() {
            let b = line.susceptance;
            if i == k {
                a[(k, th)] -= b;
                a[(j, th)] += b;
                c[(2 * e, th)] = b;
                c[(2 * e + 1, th)] = -b;
                d[2 * e] = line.f_max;
                d[2 * e + 1] = line.f_max;
            } else if j == k {
                a[(k, th)] -= b;
                a[(i, th)] += b;
                c[(2 * e, th)] = -b;
                c[(2 * e + 1, th)] = b;
            }
        }
        let mut b = vec![0.0; l];
        b[k] = bus.demand;

        let mut lower: Vec<f64> = gens.iter().map(|&g| inst.generators[g].p_min).collect();
        let mut upper: Vec<f64> = gens.iter().map(|&g| inst.generators[g].p_max).collect();
        let theta_max = if pin_slack && k == 0 { 0.0 } else { bus.theta_max };
        lower.push(-theta_max);
        upper.push(theta_max);
        let bounds = BoxSet::new(lower, upper)?;

        agents.push(
            LocalBlock::new(Arc::new(obj), bounds, lip)
                .with_equalities(a, b)
                .with_inequalities(c, d),
        );
    }
    let graph = Graph::new(l, &ends)?;
    ProblemSpec::new(agents, SharedBlock::none(), graph)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dispatch {
    pub bus: i64,
    pub output: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineFlow {
    pub from: i64,
    pub to: i64,
    pub flow: f64,
    pub f_max: f64,
    /// `f_max − |flow|`; negative when the limit is violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    pub dispatch: Vec<Dispatch>,
    pub flows: Vec<LineFlow>,
    pub total_cost: f64,
    pub total_generation: f64,
    pub total_demand: f64,
    /// Injection minus demand minus outgoing flow at each bus.
    pub balance: Vec<f64>,
}

/// Reads dispatch, flows and balance off the ergodic average.
pub fn interpret(inst: &DcOpfInstance, output: &SolverOutput) -> Result<PowerReport> {
    interpret_point(inst, &output.averages.x)
}

/// Power-system view of a stacked private vector.
pub fn interpret_point(inst: &DcOpfInstance, x: &[f64]) -> Result<PowerReport> {
    inst.validate()?;
    let map = inst.variable_map();
    let n = inst.generators.len() + inst.buses.len();
    if x.len() != n {
        return Err(Error::dim("dc-opf private vector", n, x.len()));
    }
    let theta: Vec<f64> = map.theta.iter().map(|&i| x[i]).collect();
    let dispatch: Vec<Dispatch> = inst
        .generators
        .iter()
        .zip(&map.generator)
        .map(|(g, &i)| Dispatch {
            bus: g.bus,
            output: x[i],
            cost: g.cost_at(x[i]),
        })
        .collect();

    let mut balance: Vec<f64> = inst.buses.iter().map(|b| -b.demand).collect();
    let index = inst.bus_index();
    for d in &dispatch {
        balance[index[&d.bus]] += d.output;
    }
    let mut flows = Vec::with_capacity(inst.lines.len());
    for (line, (i, j)) in inst.lines.iter().zip(inst.line_ends()) {
        let flow = line.susceptance * (theta[i] - theta[j]);
        balance[i] -= flow;
        balance[j] += flow;
        flows.push(LineFlow {
            from: line.from,
            to: line.to,
            flow,
            f_max: line.f_max,
            margin: line.f_max - flow.abs(),
        });
    }
    Ok(PowerReport {
        total_cost: dispatch.iter().map(|d| d.cost).sum(),
        total_generation: dispatch.iter().map(|d| d.output).sum(),
        total_demand: inst.total_demand(),
        dispatch,
        flows,
        balance,
    })
}

/// Sums outputs of generators per bus id, ordered by id.
pub fn output_by_bus(report: &PowerReport) -> BTreeMap<i64, f64> {
    let mut out = BTreeMap::new();
    for d in &report.dispatch {
        *out.entry(d.bus).or_insert(0.0) += d.output;
    }
    out
}
