//! Bounded-variable primal simplex over a sparse LU-factorized basis with
//! product-form updates.
//!
//! Phase 1 minimizes the total bound violation of the basic variables (a
//! piecewise-linear composite objective), which serves both cold starts
//! from the all-slack basis and warm restarts after bound changes; phase 2
//! runs the ordinary Dantzig rule with a Bland fallback engaged on
//! degenerate stalls.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{LinearModel, Relation, VarId, VarKind};

use super::lu::{LuFactors, SparseCol};
use super::{
    solver_log_enabled, SolveResult, SolveStats, SolveStatus, FEASIBILITY_TOL,
};

const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const RATIO_TIE_TOL: f64 = 1e-9;
const ETA_SPARSITY_TOL: f64 = 1e-12;
const REFACTOR_INTERVAL: u64 = 96;
const STALL_LIMIT: u64 = 800;
const MAX_ITERATIONS: u64 = 20_000_000;
const DEADLINE_CHECK_MASK: u64 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic with both bounds infinite; rests at zero.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Termination {
    Optimal,
    Infeasible,
    Unbounded,
    Deadline,
}

struct Eta {
    pos: usize,
    pivot: f64,
    /// Entries of the transformed entering column excluding the pivot
    /// position.
    entries: Vec<(u32, f64)>,
}

/// The standardized problem plus full simplex state; reused across
/// branch-and-bound nodes with mutated bounds.
pub(super) struct SimplexEngine {
    m: usize,
    /// Model variable count; internal columns beyond it are gadget and
    /// slack columns.
    n_model: usize,
    n_struct: usize,
    n_total: usize,
    /// All columns including one slack per row (slack of row i is column
    /// `n_struct + i`).
    cols: Vec<SparseCol>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Structural columns declared binary in the model.
    pub(super) binary_cols: Vec<usize>,
    abs_pairs: Vec<AbsPair>,
    /// Row-major copy of the constraint matrix including slack entries,
    /// for pivotal-row scans.
    rows: Vec<Vec<(u32, f64)>>,

    basis: Vec<u32>,
    state: Vec<VarState>,
    xb: Vec<f64>,

    lu: Option<LuFactors>,
    etas: Vec<Eta>,
    eta_nnz: usize,
    trace_w_nnz: usize,
    pivots_since_refactor: u64,

    price: Vec<f64>,
    direction: Vec<f64>,
    scratch: Vec<f64>,
    /// Devex reference weights, one per column.
    devex: Vec<f64>,
    /// Phase-2 reduced costs, maintained incrementally between
    /// refactorizations.
    dvec: Vec<f64>,
    alpha: Vec<f64>,
    alpha_touched: Vec<u32>,

    pub(super) iterations: u64,
    degenerate_pivots: u64,
}

/// An absolute-value gadget folded at standardization: the model variable
/// `h` with rows `t·x - h <= r` and `-t·x - h <= -r` is replaced by one
/// equality `t·x - u + v = r` with `u, v >= 0` carrying `h`'s cost, and
/// `h = u + v` is restored at extraction. This halves the row count of the
/// smoothness objective and keeps simplex directions local; it changes no
/// optimum.
struct AbsPair {
    h: usize,
    u: usize,
    v: usize,
}

impl SimplexEngine {
    pub(super) fn from_model(model: &LinearModel) -> Result<SimplexEngine> {
        let n_model = model.variables.len();
        for v in &model.variables {
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() {
                return Err(Error::Model(format!(
                    "variable bounds [{}, {}] are inverted",
                    v.lower, v.upper
                )));
            }
        }
        // Canonical merged terms per row.
        let mut row_terms: Vec<Vec<(usize, f64)>> = Vec::with_capacity(model.constraints.len());
        for (row, c) in model.constraints.iter().enumerate() {
            let mut terms = c.terms.clone();
            terms.sort_unstable_by_key(|&(v, _)| v);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
            for (v, a) in terms {
                if v >= n_model {
                    return Err(Error::Model(format!(
                        "constraint {row} references unknown variable {v}"
                    )));
                }
                match merged.last_mut() {
                    Some(last) if last.0 == v => last.1 += a,
                    _ => merged.push((v, a)),
                }
            }
            merged.retain(|&(_, a)| a != 0.0);
            row_terms.push(merged);
        }
        let mut cost_model = vec![0.0; n_model];
        for &(v, c) in &model.objective {
            if v >= n_model {
                return Err(Error::Model("objective references unknown variable".into()));
            }
            cost_model[v] += c;
        }

        // Detect absolute-value gadgets.
        let mut occurrences: Vec<Vec<u32>> = vec![Vec::new(); n_model];
        for (row, terms) in row_terms.iter().enumerate() {
            for &(v, _) in terms {
                if occurrences[v].len() < 3 {
                    occurrences[v].push(row as u32);
                }
            }
        }
        let negated = |a: &[(usize, f64)], b: &[(usize, f64)], skip: usize| -> bool {
            let fa: Vec<(usize, f64)> = a.iter().filter(|t| t.0 != skip).map(|&t| t).collect();
            let fb: Vec<(usize, f64)> = b.iter().filter(|t| t.0 != skip).map(|&t| t).collect();
            fa.len() == fb.len() && fa.iter().zip(&fb).all(|(x, y)| x.0 == y.0 && x.1 == -y.1)
        };
        let mut pair_of_row: Vec<Option<usize>> = vec![None; row_terms.len()]; // row -> pair index
        let mut drop_row: Vec<bool> = vec![false; row_terms.len()];
        let mut pairs_meta: Vec<(usize, usize, usize)> = Vec::new(); // (h, keep_row, drop_row)
        for h in 0..n_model {
            let var = &model.variables[h];
            if var.kind != VarKind::Continuous
                || var.lower != 0.0
                || var.upper != f64::INFINITY
                || cost_model[h] <= 0.0
                || occurrences[h].len() != 2
            {
                continue;
            }
            let (r1, r2) = (occurrences[h][0] as usize, occurrences[h][1] as usize);
            let c1 = &model.constraints[r1];
            let c2 = &model.constraints[r2];
            if c1.relation != Relation::Le || c2.relation != Relation::Le || c1.rhs != -c2.rhs {
                continue;
            }
            let coef_in = |terms: &[(usize, f64)]| {
                terms.iter().find(|t| t.0 == h).map(|t| t.1).unwrap_or(0.0)
            };
            if coef_in(&row_terms[r1]) != -1.0 || coef_in(&row_terms[r2]) != -1.0 {
                continue;
            }
            if !negated(&row_terms[r1], &row_terms[r2], h) {
                continue;
            }
            let idx = pairs_meta.len();
            pairs_meta.push((h, r1, r2));
            pair_of_row[r1] = Some(idx);
            pair_of_row[r2] = Some(idx);
            drop_row[r2] = true;
        }

        // Internal layout: model columns, then u/v per gadget, then one
        // slack per kept row.
        let n_extra = 2 * pairs_meta.len();
        let n_struct = n_model + n_extra;
        let m = row_terms.len() - pairs_meta.len();
        let n_total = n_struct + m;
        let mut cols: Vec<SparseCol> = vec![Vec::new(); n_total];
        let mut rhs = Vec::with_capacity(m);
        let mut lower = Vec::with_capacity(n_total);
        let mut upper = Vec::with_capacity(n_total);
        let mut cost = vec![0.0; n_total];
        for (j, v) in model.variables.iter().enumerate() {
            lower.push(v.lower);
            upper.push(v.upper);
            cost[j] = cost_model[j];
        }
        let mut abs_pairs = Vec::with_capacity(pairs_meta.len());
        for (idx, &(h, _, _)) in pairs_meta.iter().enumerate() {
            let u = n_model + 2 * idx;
            let v = u + 1;
            abs_pairs.push(AbsPair { h, u, v });
            // u and v inherit h's cost; h itself is pinned at zero and
            // patched back to u + v at extraction.
            cost[u] = cost[h];
            cost[v] = cost[h];
            cost[h] = 0.0;
            lower.push(0.0);
            upper.push(f64::INFINITY);
            lower.push(0.0);
            upper.push(f64::INFINITY);
        }
        for &AbsPair { h, .. } in &abs_pairs {
            lower[h] = 0.0;
            upper[h] = 0.0;
        }

        let mut row_map: Vec<u32> = vec![u32::MAX; row_terms.len()];
        let mut next_row: u32 = 0;
        for row in 0..row_terms.len() {
            if drop_row[row] {
                continue;
            }
            row_map[row] = next_row;
            let new_row = next_row;
            next_row += 1;
            match pair_of_row[row] {
                Some(idx) => {
                    let (h, _, _) = pairs_meta[idx];
                    for &(v, a) in &row_terms[row] {
                        if v != h {
                            cols[v].push((new_row, a));
                        }
                    }
                    cols[abs_pairs[idx].u].push((new_row, -1.0));
                    cols[abs_pairs[idx].v].push((new_row, 1.0));
                    rhs.push(model.constraints[row].rhs);
                    // Equality row: slack fixed at zero.
                    cols[n_struct + new_row as usize].push((new_row, 1.0));
                    lower.push(0.0);
                    upper.push(0.0);
                }
                None => {
                    for &(v, a) in &row_terms[row] {
                        cols[v].push((new_row, a));
                    }
                    rhs.push(model.constraints[row].rhs);
                    let (sl, su) = match model.constraints[row].relation {
                        Relation::Le => (0.0, f64::INFINITY),
                        Relation::Ge => (f64::NEG_INFINITY, 0.0),
                        Relation::Eq => (0.0, 0.0),
                    };
                    cols[n_struct + new_row as usize].push((new_row, 1.0));
                    lower.push(sl);
                    upper.push(su);
                }
            }
        }
        debug_assert_eq!(next_row as usize, m);

        let binary_cols = model
            .variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
            .collect();

        let mut rows_major: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
        for (j, col) in cols.iter().enumerate() {
            for &(row, a) in col {
                rows_major[row as usize].push((j as u32, a));
            }
        }

        let mut engine = SimplexEngine {
            m,
            n_model,
            n_struct,
            n_total,
            cols,
            rhs,
            cost,
            lower,
            upper,
            binary_cols,
            abs_pairs,
            rows: rows_major,
            basis: (0..m).map(|i| (n_struct + i) as u32).collect(),
            state: Vec::new(),
            xb: vec![0.0; m],
            lu: None,
            etas: Vec::new(),
            eta_nnz: 0,
            trace_w_nnz: 0,
            pivots_since_refactor: 0,
            price: vec![0.0; m],
            direction: vec![0.0; m],
            scratch: vec![0.0; m],
            devex: vec![1.0; n_total],
            dvec: vec![0.0; n_total],
            alpha: vec![0.0; n_total],
            alpha_touched: Vec::new(),
            iterations: 0,
            degenerate_pivots: 0,
        };
        engine.state = (0..n_total)
            .map(|j| {
                if j >= n_struct {
                    VarState::Basic
                } else {
                    engine.default_nonbasic_state(j)
                }
            })
            .collect();

        for &j in &model.start_upper {
            if j < n_model
                && engine.state[j] == VarState::AtLower
                && engine.upper[j].is_finite()
            {
                engine.state[j] = VarState::AtUpper;
            }
        }

        // Remap the advisory basis through the gadget fold: a hint putting
        // h on its kept (dropped) row pivots u (v) there instead.
        let mut hint = Vec::with_capacity(model.basis_hint.len());
        for &(row, var) in &model.basis_hint {
            if row >= row_terms.len() || var >= n_model {
                hint.clear();
                break;
            }
            match pair_of_row[row] {
                Some(idx) if pairs_meta[idx].0 == var => {
                    let (col, target) = if drop_row[row] {
                        (engine.abs_pairs[idx].v, pairs_meta[idx].1)
                    } else {
                        (engine.abs_pairs[idx].u, row)
                    };
                    hint.push((row_map[target] as usize, col));
                }
                _ if drop_row[row] => {
                    hint.clear();
                    break;
                }
                _ => hint.push((row_map[row] as usize, var)),
            }
        }
        engine.apply_basis_hint(&hint);
        Ok(engine)
    }

    /// Installs an advisory starting basis; invalid or singular hints fall
    /// back to the all-slack basis at first factorization.
    fn apply_basis_hint(&mut self, hint: &[(usize, VarId)]) {
        if hint.is_empty() {
            return;
        }
        let mut row_taken = vec![false; self.m];
        for &(row, var) in hint {
            if row >= self.m
                || var >= self.n_struct
                || row_taken[row]
                || self.state[var] == VarState::Basic
            {
                self.reset_to_slack_basis();
                return;
            }
            row_taken[row] = true;
            self.basis[row] = var as u32;
            self.state[var] = VarState::Basic;
        }
        // Displaced slacks become nonbasic at their natural bound.
        for row in 0..self.m {
            if row_taken[row] {
                let slack = self.n_struct + row;
                self.state[slack] = self.default_nonbasic_state(slack);
            }
        }
    }

    fn reset_to_slack_basis(&mut self) {
        for row in 0..self.m {
            self.basis[row] = (self.n_struct + row) as u32;
        }
        for j in 0..self.n_total {
            self.state[j] = if j >= self.n_struct {
                VarState::Basic
            } else {
                self.default_nonbasic_state(j)
            };
        }
        self.lu = None;
        self.etas.clear();
        self.eta_nnz = 0;
    }

    fn default_nonbasic_state(&self, j: usize) -> VarState {
        if self.lower[j].is_finite() {
            VarState::AtLower
        } else if self.upper[j].is_finite() {
            VarState::AtUpper
        } else {
            VarState::Free
        }
    }

    pub(super) fn set_bounds(&mut self, col: usize, lo: f64, hi: f64) {
        debug_assert!(col < self.n_struct && lo <= hi);
        self.lower[col] = lo;
        self.upper[col] = hi;
        if self.state[col] == VarState::Free && (lo.is_finite() || hi.is_finite()) {
            self.state[col] = self.default_nonbasic_state(col);
        }
    }

    fn nb_value(&self, j: usize) -> f64 {
        match self.state[j] {
            VarState::AtLower => self.lower[j],
            VarState::AtUpper => self.upper[j],
            VarState::Free => 0.0,
            VarState::Basic => unreachable!("basic variable has no nonbasic value"),
        }
    }

    fn factorize(&mut self) -> Result<()> {
        let refs: Vec<&SparseCol> = self.basis.iter().map(|&c| &self.cols[c as usize]).collect();
        self.lu = Some(LuFactors::factorize(self.m, &refs)?);
        if std::env::var("SBR_SOLVER_TRACE").map(|v| v == "1").unwrap_or(false) {
            let basis_nnz: usize = refs.iter().map(|c| c.len()).sum();
            eprintln!(
                "refactor m={} basis_nnz={} lu_fill={}",
                self.m,
                basis_nnz,
                self.lu.as_ref().unwrap().fill
            );
        }
        self.etas.clear();
        self.eta_nnz = 0;
        self.pivots_since_refactor = 0;
        Ok(())
    }

    fn ftran(&mut self, b: &mut [f64]) {
        self.lu.as_ref().unwrap().ftran(b, &mut self.scratch);
        for eta in &self.etas {
            let xp = b[eta.pos] / eta.pivot;
            if xp != 0.0 {
                for &(i, w) in &eta.entries {
                    b[i as usize] -= w * xp;
                }
            }
            b[eta.pos] = xp;
        }
    }

    fn btran(&mut self, c: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut acc = c[eta.pos];
            for &(i, w) in &eta.entries {
                acc -= w * c[i as usize];
            }
            c[eta.pos] = acc / eta.pivot;
        }
        self.lu.as_ref().unwrap().btran(c, &mut self.scratch);
    }

    /// Recomputes the basic values from bounds and the factorization.
    fn compute_xb(&mut self) {
        let mut r = self.rhs.clone();
        for j in 0..self.n_total {
            if self.state[j] == VarState::Basic {
                continue;
            }
            let v = self.nb_value(j);
            if v != 0.0 {
                for &(row, a) in &self.cols[j] {
                    r[row as usize] -= a * v;
                }
            }
        }
        self.ftran(&mut r);
        self.xb.copy_from_slice(&r);
    }

    /// Recomputes and exposes exact reduced costs for the current basis.
    pub(super) fn refresh_reduced_costs(&mut self) {
        self.recompute_reduced_costs();
    }

    pub(super) fn reduced_cost(&self, col: usize) -> f64 {
        self.dvec[col]
    }

    /// Full reprice of the phase-2 reduced costs from the current basis.
    fn recompute_reduced_costs(&mut self) {
        for p in 0..self.m {
            self.price[p] = self.cost[self.basis[p] as usize];
        }
        let mut price = std::mem::take(&mut self.price);
        self.btran(&mut price);
        for j in 0..self.n_total {
            if self.state[j] == VarState::Basic {
                self.dvec[j] = 0.0;
                continue;
            }
            let mut d = self.cost[j];
            for &(row, a) in &self.cols[j] {
                d -= a * price[row as usize];
            }
            self.dvec[j] = d;
        }
        self.price = price;
    }

    fn max_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.m {
            let j = self.basis[p] as usize;
            let v = self.xb[p];
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    fn infeasibility_sum(&self) -> f64 {
        let mut w = 0.0;
        for p in 0..self.m {
            let j = self.basis[p] as usize;
            let v = self.xb[p];
            if v < self.lower[j] - FEASIBILITY_TOL {
                w += self.lower[j] - v;
            } else if v > self.upper[j] + FEASIBILITY_TOL {
                w += v - self.upper[j];
            }
        }
        w
    }

    pub(super) fn objective_value(&self) -> f64 {
        let mut obj = 0.0;
        for j in 0..self.n_total {
            if self.cost[j] == 0.0 {
                continue;
            }
            obj += self.cost[j]
                * match self.state[j] {
                    VarState::Basic => 0.0, // added below from xb
                    _ => self.nb_value(j),
                };
        }
        for p in 0..self.m {
            let j = self.basis[p] as usize;
            if self.cost[j] != 0.0 {
                obj += self.cost[j] * self.xb[p];
            }
        }
        obj
    }

    /// Current assignment of the model variables, with folded gadget
    /// variables restored as `h = u + v`.
    pub(super) fn values(&self) -> Vec<f64> {
        let mut all = vec![0.0; self.n_struct];
        for (j, slot) in all.iter_mut().enumerate() {
            if self.state[j] != VarState::Basic {
                *slot = self.nb_value(j);
            }
        }
        for p in 0..self.m {
            let j = self.basis[p] as usize;
            if j < self.n_struct {
                all[j] = self.xb[p];
            }
        }
        for pair in &self.abs_pairs {
            all[pair.h] = all[pair.u] + all[pair.v];
        }
        all.truncate(self.n_model);
        all
    }

    /// Solves from the current basis: refreshes the factorization if
    /// needed, restores feasibility (phase 1), then optimizes (phase 2).
    pub(super) fn solve(&mut self, deadline: Option<Instant>) -> Result<Termination> {
        if self.lu.is_none() && self.factorize().is_err() {
            // A singular advisory basis falls back to the slacks.
            self.reset_to_slack_basis();
            self.factorize()?;
        }
        self.compute_xb();
        if self.max_violation() > FEASIBILITY_TOL {
            match self.primal(true, deadline)? {
                Termination::Optimal => {}
                other => return Ok(other),
            }
            if self.max_violation() > FEASIBILITY_TOL {
                // Phase 1 stopped with leftover violation: infeasible.
                return Ok(Termination::Infeasible);
            }
        }
        self.primal(false, deadline)
    }

    /// One simplex phase. Phase 1 drives the total bound violation of the
    /// basics to zero; phase 2 minimizes the model objective. Bland's rule
    /// engages after a streak of degenerate steps and disengages on
    /// progress.
    fn primal(&mut self, phase1: bool, deadline: Option<Instant>) -> Result<Termination> {
        let trace = std::env::var("SBR_SOLVER_TRACE").map(|v| v == "1").unwrap_or(false);
        let trace_start = Instant::now();
        let mut bland = false;
        let mut degenerate_streak: u64 = 0;
        let mut d_fresh = false;
        // Fresh reference framework per phase.
        self.devex.iter_mut().for_each(|g| *g = 1.0);
        loop {
            self.iterations += 1;
            if self.iterations > MAX_ITERATIONS {
                return Err(Error::Solver("simplex iteration limit exceeded".into()));
            }
            if trace && self.iterations % 2000 == 0 {
                eprintln!(
                    "trace iter={} phase={} infeas={:.3e} etas={} eta_nnz={} avg_w_nnz={:.0} degen={} t={:.1}s",
                    self.iterations,
                    if phase1 { 1 } else { 2 },
                    self.infeasibility_sum(),
                    self.etas.len(),
                    self.eta_nnz,
                    self.trace_w_nnz as f64 / 2000.0,
                    self.degenerate_pivots,
                    trace_start.elapsed().as_secs_f64()
                );
                self.trace_w_nnz = 0;
            }
            if let Some(d) = deadline {
                if self.iterations & DEADLINE_CHECK_MASK == 0 && Instant::now() >= d {
                    return Ok(Termination::Deadline);
                }
            }
            let eta_budget = 6 * self.m + self.lu.as_ref().map(|l| l.fill).unwrap_or(0);
            if self.pivots_since_refactor >= REFACTOR_INTERVAL || self.eta_nnz > eta_budget {
                self.factorize()?;
                self.compute_xb();
                d_fresh = false;
            }

            // Entering choice: Devex-weighted reduced costs, or Bland
            // (lowest eligible index) while breaking a degenerate stall.
            // Phase 1 reprices from the violation gradient every iteration;
            // phase 2 maintains reduced costs incrementally.
            let mut enter: Option<(usize, f64, f64)> = None; // (col, d, score)
            if phase1 {
                let mut any = false;
                for p in 0..self.m {
                    let j = self.basis[p] as usize;
                    let v = self.xb[p];
                    self.price[p] = if v < self.lower[j] - FEASIBILITY_TOL {
                        any = true;
                        -1.0
                    } else if v > self.upper[j] + FEASIBILITY_TOL {
                        any = true;
                        1.0
                    } else {
                        0.0
                    };
                }
                if !any {
                    return Ok(Termination::Optimal);
                }
                let mut price = std::mem::take(&mut self.price);
                self.btran(&mut price);
                for j in 0..self.n_total {
                    if self.state[j] == VarState::Basic || self.lower[j] == self.upper[j] {
                        continue;
                    }
                    let mut d = 0.0;
                    for &(row, a) in &self.cols[j] {
                        d -= a * price[row as usize];
                    }
                    let eligible = match self.state[j] {
                        VarState::AtLower => d < -DUAL_TOL,
                        VarState::AtUpper => d > DUAL_TOL,
                        VarState::Free => d.abs() > DUAL_TOL,
                        VarState::Basic => unreachable!(),
                    };
                    if !eligible {
                        continue;
                    }
                    if bland {
                        enter = Some((j, d, 0.0));
                        break;
                    }
                    let score = d * d / self.devex[j];
                    if enter.map(|(_, _, s)| score > s).unwrap_or(true) {
                        enter = Some((j, d, score));
                    }
                }
                self.price = price;
            } else {
                if !d_fresh {
                    self.recompute_reduced_costs();
                    d_fresh = true;
                }
                for j in 0..self.n_total {
                    if self.state[j] == VarState::Basic || self.lower[j] == self.upper[j] {
                        continue;
                    }
                    let d = self.dvec[j];
                    let eligible = match self.state[j] {
                        VarState::AtLower => d < -DUAL_TOL,
                        VarState::AtUpper => d > DUAL_TOL,
                        VarState::Free => d.abs() > DUAL_TOL,
                        VarState::Basic => unreachable!(),
                    };
                    if !eligible {
                        continue;
                    }
                    if bland {
                        enter = Some((j, d, 0.0));
                        break;
                    }
                    let score = d * d / self.devex[j];
                    if enter.map(|(_, _, s)| score > s).unwrap_or(true) {
                        enter = Some((j, d, score));
                    }
                }
            }

            let (enter_col, d_enter) = match enter {
                Some((j, d, _)) => (j, d),
                None => {
                    return if phase1 {
                        // No improving direction with violation left.
                        Ok(if self.infeasibility_sum() > FEASIBILITY_TOL {
                            Termination::Infeasible
                        } else {
                            Termination::Optimal
                        })
                    } else {
                        Ok(Termination::Optimal)
                    };
                }
            };
            let dir = match self.state[enter_col] {
                VarState::AtLower => 1.0,
                VarState::AtUpper => -1.0,
                VarState::Free => {
                    if d_enter < 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                VarState::Basic => unreachable!(),
            };

            // Transformed entering column.
            let mut w = std::mem::take(&mut self.direction);
            w.iter_mut().for_each(|v| *v = 0.0);
            for &(row, a) in &self.cols[enter_col] {
                w[row as usize] = a;
            }
            self.ftran(&mut w);
            if trace {
                self.trace_w_nnz += w.iter().filter(|v| v.abs() > 1e-12).count();
            }

            // Ratio test, pass 1: the exact minimum blocking step. In
            // phase 1 a violated basic blocks when it returns to its
            // violated bound (short-step rule); feasible basics block at
            // whichever bound they approach.
            let self_block = self.upper[enter_col] - self.lower[enter_col];
            let ratio_of = |p: usize, wp: f64| -> Option<(f64, VarState)> {
                let rate = -dir * wp;
                let j = self.basis[p] as usize;
                let v = self.xb[p];
                let (lb, ub) = (self.lower[j], self.upper[j]);
                if phase1 && v < lb - FEASIBILITY_TOL {
                    if rate > 0.0 {
                        Some(((lb - v) / rate, VarState::AtLower))
                    } else {
                        None
                    }
                } else if phase1 && v > ub + FEASIBILITY_TOL {
                    if rate < 0.0 {
                        Some(((v - ub) / -rate, VarState::AtUpper))
                    } else {
                        None
                    }
                } else if rate < 0.0 {
                    if lb.is_finite() {
                        Some((((v - lb) / -rate).max(0.0), VarState::AtLower))
                    } else {
                        None
                    }
                } else if ub.is_finite() {
                    Some((((ub - v) / rate).max(0.0), VarState::AtUpper))
                } else {
                    None
                }
            };
            let mut t_min = f64::INFINITY;
            for p in 0..self.m {
                let wp = w[p];
                if wp.abs() <= PIVOT_TOL {
                    continue;
                }
                if let Some((t, _)) = ratio_of(p, wp) {
                    if t < t_min {
                        t_min = t;
                    }
                }
            }

            if !t_min.is_finite() && !self_block.is_finite() {
                self.direction = w;
                return if phase1 {
                    Err(Error::Solver("phase-1 direction unblocked; numerical breakdown".into()))
                } else {
                    Ok(Termination::Unbounded)
                };
            }

            if self_block <= t_min {
                // Bound flip of the entering variable; no basis change.
                let t = self_block;
                for p in 0..self.m {
                    if w[p] != 0.0 {
                        self.xb[p] -= dir * w[p] * t;
                    }
                }
                self.state[enter_col] = match self.state[enter_col] {
                    VarState::AtLower => VarState::AtUpper,
                    VarState::AtUpper => VarState::AtLower,
                    other => other,
                };
                degenerate_streak = if t > 1e-12 { 0 } else { degenerate_streak + 1 };
                if degenerate_streak >= STALL_LIMIT {
                    bland = true;
                } else if t > 1e-12 {
                    bland = false;
                }
                self.direction = w;
                continue;
            }

            // Pass 2: pick the leaving variable among near-minimal ratios,
            // largest |pivot| first for stability (lowest column id under
            // Bland), ties by lowest column id.
            let mut blocker: Option<(usize, VarState, f64)> = None;
            for p in 0..self.m {
                let wp = w[p];
                if wp.abs() <= PIVOT_TOL {
                    continue;
                }
                if let Some((t, leave_at)) = ratio_of(p, wp) {
                    if t > t_min + RATIO_TIE_TOL {
                        continue;
                    }
                    let better = match blocker {
                        None => true,
                        Some((bp, _, bw)) => {
                            if bland {
                                (self.basis[p] as usize) < self.basis[bp] as usize
                            } else {
                                wp.abs() > bw
                                    || (wp.abs() == bw
                                        && (self.basis[p] as usize) < self.basis[bp] as usize)
                            }
                        }
                    };
                    if better {
                        blocker = Some((p, leave_at, wp.abs()));
                    }
                }
            }
            let (p_out, leave_at, _) = blocker.expect("finite min ratio implies a blocker");
            let t = t_min.max(0.0);
            let leave_col = self.basis[p_out] as usize;

            // One pivotal-row pass drives both the Devex weight update and
            // the incremental reduced costs.
            let need_rho = !phase1 || !bland;
            if need_rho {
                let alpha_r = w[p_out];
                let ratio = self.devex[enter_col].max(1.0) / (alpha_r * alpha_r);
                let update_devex = !bland && ratio <= 1e8;
                if !bland && !update_devex {
                    self.devex.iter_mut().for_each(|g| *g = 1.0);
                }
                let update_d = !phase1;
                if update_devex || update_d {
                    let mut rho = std::mem::take(&mut self.price);
                    rho.iter_mut().for_each(|v| *v = 0.0);
                    rho[p_out] = 1.0;
                    self.btran(&mut rho);
                    let mut alpha = std::mem::take(&mut self.alpha);
                    let mut touched = std::mem::take(&mut self.alpha_touched);
                    touched.clear();
                    for (i, &r) in rho.iter().enumerate() {
                        if r == 0.0 {
                            continue;
                        }
                        for &(j, a) in &self.rows[i] {
                            if alpha[j as usize] == 0.0 {
                                touched.push(j);
                            }
                            alpha[j as usize] += r * a;
                        }
                    }
                    let step = d_enter / alpha_r;
                    for &j in &touched {
                        let j = j as usize;
                        let a_j = alpha[j];
                        alpha[j] = 0.0;
                        if a_j == 0.0 {
                            continue;
                        }
                        if update_d {
                            self.dvec[j] -= step * a_j;
                        }
                        if update_devex
                            && self.state[j] != VarState::Basic
                            && self.lower[j] < self.upper[j]
                        {
                            let cand = a_j * a_j * ratio;
                            if cand > self.devex[j] {
                                self.devex[j] = cand;
                            }
                        }
                    }
                    if update_d {
                        self.dvec[leave_col] = -step;
                        self.dvec[enter_col] = 0.0;
                    }
                    self.alpha = alpha;
                    self.alpha_touched = touched;
                    self.price = rho;
                }
                if update_devex {
                    self.devex[leave_col] = ratio.max(1.0);
                }
            }

            for p in 0..self.m {
                if w[p] != 0.0 {
                    self.xb[p] -= dir * w[p] * t;
                }
            }
            let enter_value = match self.state[enter_col] {
                VarState::Free => dir * t,
                _ => self.nb_value(enter_col) + dir * t,
            };
            self.state[leave_col] = leave_at;
            self.state[enter_col] = VarState::Basic;
            self.basis[p_out] = enter_col as u32;
            self.xb[p_out] = enter_value;
            let pivot = w[p_out];
            let entries: Vec<(u32, f64)> = (0..self.m)
                .filter(|&p| p != p_out && w[p].abs() > ETA_SPARSITY_TOL)
                .map(|p| (p as u32, w[p]))
                .collect();
            self.eta_nnz += entries.len();
            self.etas.push(Eta { pos: p_out, pivot, entries });
            self.pivots_since_refactor += 1;

            if t <= 1e-12 {
                self.degenerate_pivots += 1;
            }
            degenerate_streak = if t > 1e-12 { 0 } else { degenerate_streak + 1 };
            if degenerate_streak >= STALL_LIMIT {
                bland = true;
            } else if t > 1e-12 {
                bland = false;
            }
            self.direction = w;
        }
    }
}

/// Solves the model as an LP (binaries relaxed to their boxes), returning
/// an optimal basic solution. Deterministic for a fixed model.
pub(super) fn solve_lp(model: &LinearModel) -> Result<SolveResult> {
    let start = Instant::now();
    let mut engine = SimplexEngine::from_model(model)?;
    let term = engine.solve(None)?;
    let stats = SolveStats {
        nodes: 0,
        simplex_iterations: engine.iterations,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let result = match term {
        Termination::Optimal => SolveResult {
            status: SolveStatus::Optimal,
            objective: engine.objective_value(),
            values: engine.values(),
            stats,
        },
        Termination::Infeasible => SolveResult::without_solution(SolveStatus::Infeasible, stats),
        Termination::Unbounded => SolveResult::without_solution(SolveStatus::Unbounded, stats),
        Termination::Deadline => {
            return Err(Error::Solver("LP hit a deadline without one configured".into()))
        }
    };
    if solver_log_enabled() {
        eprintln!(
            "lp status={} obj={:.9} iters={} t={:.3}",
            result.status.as_str(),
            result.objective,
            stats.simplex_iterations,
            stats.wall_seconds
        );
    }
    Ok(result)
}
