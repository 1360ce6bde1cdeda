//! Mixed-integer linear solver: model container, interval presolve, dense
//! bounded-variable simplex and depth-first branch-and-bound.

mod bnb;
mod model;
mod presolve;
mod simplex;

use std::time::Duration;

use thiserror::Error;

pub use bnb::mip_solve;
pub use model::{MipModel, Residuals, Row, RowId, Sense, VarId, VarKind};
pub use presolve::{presolve_propagate, Presolved};
pub use simplex::LpStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MipError {
    #[error("row references unknown variable {var}")]
    UnknownVar { var: usize },
    #[error("variable {var} needs finite bounds")]
    InfiniteBound { var: usize },
    #[error("variable {var} has empty bounds [{lb}, {ub}]")]
    EmptyBounds { var: usize, lb: f64, ub: f64 },
    #[error("non-finite coefficient")]
    NonFinite,
    #[error("assignment has {got} entries, model has {expected} variables")]
    AssignmentLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Feasible,
    Infeasible,
    IterationLimit,
}

impl MipStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, MipStatus::Optimal | MipStatus::Feasible)
    }
}

/// Search limits and tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub time_limit: Option<Duration>,
    pub node_limit: usize,
    /// Stop at the first integer-feasible point and ignore the objective.
    pub feasibility_only: bool,
    pub feastol: f64,
    pub inttol: f64,
    pub prune_gap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: 200_000,
            feasibility_only: false,
            feastol: 1e-9,
            inttol: 1e-7,
            prune_gap: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipResult {
    pub status: MipStatus,
    /// Indexed by `VarId`; empty when no solution was found.
    pub assignment: Vec<f64>,
    pub objective: f64,
    pub nodes: usize,
    pub lp_pivots: usize,
    pub solve_time: Duration,
}

impl MipResult {
    pub fn value(&self, v: VarId) -> f64 {
        self.assignment[v.0]
    }
}

/// Solves the LP relaxation (binaries relaxed to `[0, 1]`).
pub fn lp_solve(model: &MipModel, feastol: f64) -> (LpStatus, Vec<f64>, f64) {
    let mut tab = simplex::Tableau::new(model, &model.lb, &model.ub, true, feastol);
    let status = tab.solve();
    if status == LpStatus::Optimal {
        let x = tab.structural_values();
        let obj = model.objective_value(&x);
        (status, x, obj)
    } else {
        (status, Vec::new(), f64::NAN)
    }
}
