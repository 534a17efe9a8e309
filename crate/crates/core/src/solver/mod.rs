//! Self-contained LP and MILP solving: a bounded-variable two-phase primal
//! simplex over a sparse LU-factorized basis, and a deterministic
//! branch-and-bound over binary selectors with time limits and incumbent
//! return.

mod lu;
mod milp;
mod simplex;

use crate::error::Result;
use crate::model::LinearModel;

pub use milp::MilpOptions;

/// Outcome classification of one solve call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Proven optimal within tolerances.
    Optimal,
    /// The time limit expired; `values` hold the best feasible integer
    /// solution found.
    TimeoutIncumbent,
    /// Proven infeasible.
    Infeasible,
    /// The objective is unbounded below on the feasible set.
    Unbounded,
    /// The search ended with neither a feasible integer point nor an
    /// infeasibility proof.
    InfeasibleOrUnknown,
}

impl SolveStatus {
    pub fn has_solution(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::TimeoutIncumbent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::TimeoutIncumbent => "timeout-incumbent",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::InfeasibleOrUnknown => "infeasible-or-unknown",
        }
    }
}

/// Work counters of one solve call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveStats {
    pub nodes: u64,
    pub simplex_iterations: u64,
    pub wall_seconds: f64,
}

/// Solution report: status, objective, per-model-variable assignment and
/// work counters. `objective` and `values` are meaningful only when
/// `status.has_solution()`.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    pub values: Vec<f64>,
    pub stats: SolveStats,
}

impl SolveResult {
    pub(crate) fn without_solution(status: SolveStatus, stats: SolveStats) -> Self {
        SolveResult { status, objective: f64::INFINITY, values: Vec::new(), stats }
    }
}

/// Absolute feasibility tolerance on constraints and bounds.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// How close a binary must be to 0 or 1 to count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Absolute objective gap below which optimality is declared.
pub const OPTIMALITY_GAP: f64 = 1e-9;

/// Pluggable solving interface; the built-in implementation is the
/// reference, external solvers can be swapped in for cross-validation.
pub trait LinearSolver {
    /// Solves the model with binaries relaxed to their `[0, 1]` boxes,
    /// returning an optimal basic solution.
    fn solve_lp(&self, model: &LinearModel) -> Result<SolveResult>;

    /// Solves the model with binaries restricted to {0, 1} by
    /// branch-and-bound.
    fn solve_milp(&self, model: &LinearModel, options: &MilpOptions) -> Result<SolveResult>;
}

/// The built-in simplex + branch-and-bound solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinSolver;

impl LinearSolver for BuiltinSolver {
    fn solve_lp(&self, model: &LinearModel) -> Result<SolveResult> {
        simplex::solve_lp(model)
    }

    fn solve_milp(&self, model: &LinearModel, options: &MilpOptions) -> Result<SolveResult> {
        milp::solve_milp(model, options)
    }
}

/// Convenience free function matching the trait method.
pub fn solve_lp(model: &LinearModel) -> Result<SolveResult> {
    simplex::solve_lp(model)
}

/// Convenience free function matching the trait method.
pub fn solve_milp(model: &LinearModel, options: &MilpOptions) -> Result<SolveResult> {
    milp::solve_milp(model, options)
}

pub(crate) fn solver_log_enabled() -> bool {
    std::env::var("SBR_SOLVER_LOG").map(|v| v == "1").unwrap_or(false)
}
