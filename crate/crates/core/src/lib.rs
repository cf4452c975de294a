//! Decentralized extragradient for convex, partially separable problems with
//! coupled and shared affine constraints.
//!
//! Agents hold private objectives and constraint slices and communicate only
//! through multiplications by a Laplacian-type matrix of the communication
//! graph. See [`solver::run`] for the main entry point and [`oracle`] for the
//! centralized reference solver.

pub mod dcopf;
pub mod dense;
pub mod error;
pub mod graph;
pub mod instance;
pub mod oracle;
pub mod problem;
pub mod qp;
pub mod random;
pub mod saddle;
pub mod solver;
pub mod cli;

pub use error::{Error, Result};
pub use graph::{laplacian, matrix_stats, CommunicationMatrix, Graph};
pub use problem::{BoxSet, LocalBlock, Objective, ProblemSpec, QuadraticObjective, SharedBlock};
pub use saddle::{compute_constants, IterateVector, ProblemConstants, SaddleOperator};
pub use solver::{run, SolverConfig, SolverOutput};
