//! Instance files.
//!
//! Two document shapes are accepted, each as JSON or TOML: a generic problem
//! with top-level keys `agents`, `shared` and `graph`, and a DC-OPF network
//! with `buses`, `generators` and `lines`. The shape is chosen by the keys
//! present and the syntax by the first non-blank character (`{` for JSON).

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dcopf::DcOpfInstance;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::problem::{BoxSet, LocalBlock, ProblemSpec, QuadraticObjective, SharedBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxFile {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectiveFile {
    Quadratic {
        #[serde(rename = "Q")]
        q_mat: Vec<Vec<f64>>,
        q: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFile {
    pub dim: usize,
    pub objective: ObjectiveFile,
    #[serde(rename = "A", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(rename = "C", default)]
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub d: Vec<f64>,
    #[serde(rename = "box")]
    pub bounds: BoxFile,
    /// Defaults to the largest eigenvalue of `Q`.
    #[serde(default)]
    pub lipschitz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedFile {
    pub dim: usize,
    #[serde(rename = "Atil", default)]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "btil", default)]
    pub b: Vec<f64>,
    #[serde(rename = "Ctil", default)]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "dtil", default)]
    pub d: Vec<f64>,
    #[serde(rename = "box")]
    pub bounds: BoxFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub nodes: usize,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub agents: Vec<AgentFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared: Option<SharedFile>,
    pub graph: GraphFile,
}

#[derive(Debug, Clone)]
pub enum Instance {
    Problem(ProblemSpec),
    DcOpf(DcOpfInstance),
}

fn matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        return Err(Error::dim(format!("{what} row {i}"), cols, r.len()));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn to_spec(&self) -> Result<ProblemSpec> {
        let shared_dim = self.shared.as_ref().map_or(0, |s| s.dim);
        let mut agents = Vec::with_capacity(self.agents.len());
        for (k, a) in self.agents.iter().enumerate() {
            let ObjectiveFile::Quadratic { q_mat, q, constant } = &a.objective;
            let obj = QuadraticObjective::new(
                a.dim,
                matrix(q_mat, a.dim + shared_dim, &format!("agent {k} Q"))?,
                q.clone(),
                *constant,
            )?;
            let lip = a.lipschitz.unwrap_or_else(|| obj.lipschitz());
            let bounds = BoxSet::new(a.bounds.lower.clone(), a.bounds.upper.clone())?;
            agents.push(
                LocalBlock::new(Arc::new(obj), bounds, lip)
                    .with_equalities(matrix(&a.a, a.dim, &format!("agent {k} A"))?, a.b.clone())
                    .with_inequalities(matrix(&a.c, a.dim, &format!("agent {k} C"))?, a.d.clone()),
            );
        }
        let shared = match &self.shared {
            None => SharedBlock::none(),
            Some(s) => SharedBlock {
                dim: s.dim,
                a: matrix(&s.a, s.dim, "shared Atil")?,
                b: s.b.clone(),
                c: matrix(&s.c, s.dim, "shared Ctil")?,
                d: s.d.clone(),
                bounds: BoxSet::new(s.bounds.lower.clone(), s.bounds.upper.clone())?,
            },
        };
        let edges: Vec<(usize, usize)> = self.graph.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = Graph::from_edge_list(self.graph.nodes, &edges)?;
        ProblemSpec::new(agents, shared, graph)
    }

    /// File form of an instance whose objectives are all quadratic.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        let mut agents = Vec::with_capacity(spec.agent_count());
        for (k, a) in spec.agents.iter().enumerate() {
            let q = a.objective.as_quadratic().ok_or(Error::NonQuadratic(k))?;
            agents.push(AgentFile {
                dim: a.dim,
                objective: ObjectiveFile::Quadratic {
                    q_mat: rows_of(q.hessian()),
                    q: q.linear().to_vec(),
                    constant: q.constant(),
                },
                a: rows_of(&a.a),
                b: a.b.clone(),
                c: rows_of(&a.c),
                d: a.d.clone(),
                bounds: BoxFile {
                    lower: a.bounds.lower().to_vec(),
                    upper: a.bounds.upper().to_vec(),
                },
                lipschitz: Some(a.lipschitz),
            });
        }
        let s = &spec.shared;
        let shared = (s.dim > 0).then(|| SharedFile {
            dim: s.dim,
            a: rows_of(&s.a),
            b: s.b.clone(),
            c: rows_of(&s.c),
            d: s.d.clone(),
            bounds: BoxFile {
                lower: s.bounds.lower().to_vec(),
                upper: s.bounds.upper().to_vec(),
            },
        });
        Ok(Self {
            agents,
            shared,
            graph: GraphFile {
                nodes: spec.graph.node_count(),
                edges: spec.graph.edges().map(|(i, j)| [i, j]).collect(),
            },
        })
    }
}

fn parse_value(text: &str) -> Result<serde_json::Value> {
    if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("json: {e}")))
    } else {
        toml::from_str(text).map_err(|e| Error::Parse(format!("toml: {e}")))
    }
}

/// Parses either instance shape from JSON or TOML text.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let value = parse_value(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse("instance must be a table at the top level".into()))?;
    if obj.contains_key("agents") {
        let file: ProblemFile =
            serde_json::from_value(value).map_err(|e| Error::Parse(format!("problem instance: {e}")))?;
        Ok(Instance::Problem(file.to_spec()?))
    } else if obj.contains_key("buses") {
        let inst: DcOpfInstance =
            serde_json::from_value(value).map_err(|e| Error::Parse(format!("dc-opf instance: {e}")))?;
        inst.validate()?;
        Ok(Instance::DcOpf(inst))
    } else {
        Err(Error::Parse(
            "unrecognized instance: expected top-level `agents` or `buses`".into(),
        ))
    }
}

pub fn load_instance(path: &Path) -> Result<Instance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

pub fn load_dcopf(path: &Path) -> Result<DcOpfInstance> {
    match load_instance(path)? {
        Instance::DcOpf(inst) => Ok(inst),
        Instance::Problem(_) => Err(Error::Parse(format!("{} is not a dc-opf instance", path.display()))),
    }
}
