//! Deterministic branch-and-bound over binary selectors: best-bound node
//! order with ties by node id, most-fractional branching with ties by
//! variable id, root incumbent seeded by rounding the relaxation and
//! repairing feasibility through an LP re-solve.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::LinearModel;

use super::simplex::{SimplexEngine, Termination};
use super::{
    solver_log_enabled, SolveResult, SolveStats, SolveStatus, INTEGRALITY_TOL, OPTIMALITY_GAP,
};

/// Knobs of one branch-and-bound run.
#[derive(Debug, Clone)]
pub struct MilpOptions {
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
    /// Reserved for randomized strategies; the built-in search is
    /// deterministic and echoes the seed only.
    pub seed: u64,
    /// Optional deterministic cap on explored nodes.
    pub node_limit: Option<u64>,
    /// Stop after this many consecutive nodes without an incumbent
    /// improvement, returning the incumbent as a timeout would. Keeps runs
    /// with a large relaxation gap from spending the whole wall budget.
    pub stall_node_limit: Option<u64>,
    /// Known-good binary assignment tried as an additional root incumbent,
    /// as (model variable id, value) pairs.
    pub incumbent_hint: Option<Vec<(usize, u8)>>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        MilpOptions {
            time_limit: 600.0,
            seed: 0,
            node_limit: None,
            stall_node_limit: None,
            incumbent_hint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct NodeKey {
    bound: f64,
    id: u64,
}

impl Eq for NodeKey {}

impl Ord for NodeKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.bound
            .total_cmp(&other.bound)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for NodeKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

struct Node {
    key: NodeKey,
    fixings: Vec<(usize, u8)>,
}

struct Incumbent {
    objective: f64,
    values: Vec<f64>,
}

fn is_integral(values: &[f64], binaries: &[usize]) -> bool {
    binaries
        .iter()
        .all(|&b| (values[b] - values[b].round()).abs() <= INTEGRALITY_TOL)
}

fn apply_fixings(engine: &mut SimplexEngine, binaries: &[usize], fixings: &[(usize, u8)]) {
    for &b in binaries {
        engine.set_bounds(b, 0.0, 1.0);
    }
    for &(b, v) in fixings {
        engine.set_bounds(b, v as f64, v as f64);
    }
}

/// Solves the model with binary variables restricted to {0, 1}.
pub fn solve_milp(model: &LinearModel, options: &MilpOptions) -> Result<SolveResult> {
    if !sane_limit(options.time_limit) {
        return Err(Error::Config(format!("time limit {} must be positive", options.time_limit)));
    }
    let start = Instant::now();
    let deadline = start + Duration::from_secs_f64(options.time_limit);
    let log = solver_log_enabled();
    let mut engine = SimplexEngine::from_model(model)?;
    let binaries = engine.binary_cols.clone();

    let mut stats = SolveStats::default();
    let finish = |engine: &SimplexEngine, mut stats: SolveStats, start: Instant| {
        stats.simplex_iterations = engine.iterations;
        stats.wall_seconds = start.elapsed().as_secs_f64();
        stats
    };

    // Root relaxation.
    let term = engine.solve(Some(deadline))?;
    match term {
        Termination::Infeasible => {
            return Ok(SolveResult::without_solution(
                SolveStatus::Infeasible,
                finish(&engine, stats, start),
            ))
        }
        Termination::Unbounded => {
            return Ok(SolveResult::without_solution(
                SolveStatus::Unbounded,
                finish(&engine, stats, start),
            ))
        }
        Termination::Deadline => {
            return Ok(SolveResult::without_solution(
                SolveStatus::InfeasibleOrUnknown,
                finish(&engine, stats, start),
            ))
        }
        Termination::Optimal => {}
    }
    let root_objective = engine.objective_value();
    let root_values = engine.values();
    engine.refresh_reduced_costs();
    let root_rc: Vec<f64> = binaries.iter().map(|&b| engine.reduced_cost(b)).collect();

    if binaries.is_empty() {
        return Ok(SolveResult {
            status: SolveStatus::Optimal,
            objective: root_objective,
            values: root_values,
            stats: finish(&engine, stats, start),
        });
    }

    let mut incumbent: Option<Incumbent> = None;
    let consider = |cand: Option<(f64, Vec<f64>)>, incumbent: &mut Option<Incumbent>| {
        if let Some((obj, values)) = cand {
            let better = incumbent.as_ref().map(|i| obj < i.objective - 1e-12).unwrap_or(true);
            if better {
                *incumbent = Some(Incumbent { objective: obj, values });
            }
        }
    };

    // Root incumbent: round the relaxation's selectors and repair
    // feasibility by re-solving the continuous part.
    let rounded: Vec<(usize, u8)> = binaries
        .iter()
        .map(|&b| (b, if root_values[b] >= 0.5 { 1u8 } else { 0 }))
        .collect();
    consider(probe_assignment(&mut engine, &binaries, &rounded, deadline)?, &mut incumbent);
    if let Some(hint) = &options.incumbent_hint {
        consider(probe_assignment(&mut engine, &binaries, hint, deadline)?, &mut incumbent);
    }

    if is_integral(&root_values, &binaries) {
        // The relaxation is already integral; it dominates any incumbent.
        return Ok(SolveResult {
            status: SolveStatus::Optimal,
            objective: root_objective,
            values: root_values,
            stats: finish(&engine, stats, start),
        });
    }

    // Reduced-cost fixing: a selector nonbasic at the root whose reduced
    // cost alone exceeds the incumbent gap can never flip in an improving
    // solution. (Bound tightening; valid for every later incumbent since
    // incumbents only improve.)
    let mut root_fixed: Vec<(usize, u8)> = Vec::new();
    if let Some(inc) = &incumbent {
        let gap = inc.objective - root_objective;
        for (idx, &b) in binaries.iter().enumerate() {
            let v = root_values[b];
            if v <= INTEGRALITY_TOL && root_rc[idx] > gap + OPTIMALITY_GAP {
                root_fixed.push((b, 0));
            } else if v >= 1.0 - INTEGRALITY_TOL && -root_rc[idx] > gap + OPTIMALITY_GAP {
                root_fixed.push((b, 1));
            }
        }
        if log && !root_fixed.is_empty() {
            eprintln!("root fixing: {} of {} selectors", root_fixed.len(), binaries.len());
        }
    }

    let mut heap: BinaryHeap<Reverse<NodeKey>> = BinaryHeap::new();
    let mut nodes: Vec<Option<Node>> = Vec::new();
    let mut next_id: u64 = 0;
    let push = |heap: &mut BinaryHeap<Reverse<NodeKey>>,
                    nodes: &mut Vec<Option<Node>>,
                    next_id: &mut u64,
                    bound: f64,
                    fixings: Vec<(usize, u8)>| {
        let key = NodeKey { bound, id: *next_id };
        *next_id += 1;
        nodes.push(Some(Node { key, fixings }));
        heap.push(Reverse(key));
    };

    // Children of the root.
    {
        let (var, frac_val) = most_fractional(&root_values, &binaries);
        let first: u8 = if frac_val >= 0.5 { 1 } else { 0 };
        push(&mut heap, &mut nodes, &mut next_id, root_objective, vec![(var, first)]);
        push(&mut heap, &mut nodes, &mut next_id, root_objective, vec![(var, 1 - first)]);
    }

    let mut timed_out = false;
    let mut nodes_since_improvement: u64 = 0;
    while let Some(Reverse(key)) = heap.pop() {
        let node = match nodes[key.id as usize].take() {
            Some(n) => n,
            None => continue,
        };
        let inc_obj = incumbent.as_ref().map(|i| i.objective).unwrap_or(f64::INFINITY);
        // A node is pruned only when its bound cannot beat the incumbent.
        if node.key.bound >= inc_obj - OPTIMALITY_GAP {
            continue;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            break;
        }
        if let Some(limit) = options.node_limit {
            if stats.nodes >= limit {
                timed_out = true;
                break;
            }
        }
        if let Some(stall) = options.stall_node_limit {
            // The stall budget only applies once an incumbent exists; with
            // none, keep searching for a first feasible point.
            if incumbent.is_some() && nodes_since_improvement >= stall {
                timed_out = true;
                break;
            }
        }
        stats.nodes += 1;
        nodes_since_improvement += 1;

        apply_fixings(&mut engine, &binaries, &root_fixed);
        for &(b, v) in &node.fixings {
            engine.set_bounds(b, v as f64, v as f64);
        }
        let term = engine.solve(Some(deadline))?;
        match term {
            Termination::Infeasible => continue,
            Termination::Unbounded => {
                return Ok(SolveResult::without_solution(
                    SolveStatus::Unbounded,
                    finish(&engine, stats, start),
                ))
            }
            Termination::Deadline => {
                timed_out = true;
                break;
            }
            Termination::Optimal => {}
        }
        let obj = engine.objective_value();
        if log {
            eprintln!(
                "node={} bound={:.9} incumbent={:.9} t={:.3}",
                stats.nodes,
                obj,
                inc_obj,
                start.elapsed().as_secs_f64()
            );
        }
        if obj >= inc_obj - OPTIMALITY_GAP {
            continue;
        }
        let values = engine.values();
        if is_integral(&values, &binaries) {
            consider(Some((obj, values)), &mut incumbent);
            nodes_since_improvement = 0;
            continue;
        }
        let (var, frac_val) = most_fractional(&values, &binaries);
        let first: u8 = if frac_val >= 0.5 { 1 } else { 0 };
        let mut f1 = node.fixings.clone();
        f1.push((var, first));
        push(&mut heap, &mut nodes, &mut next_id, obj, f1);
        let mut f2 = node.fixings;
        f2.push((var, 1 - first));
        push(&mut heap, &mut nodes, &mut next_id, obj, f2);
    }

    let stats = finish(&engine, stats, start);
    match (incumbent, timed_out) {
        (Some(inc), false) => Ok(SolveResult {
            status: SolveStatus::Optimal,
            objective: inc.objective,
            values: inc.values,
            stats,
        }),
        (Some(inc), true) => Ok(SolveResult {
            status: SolveStatus::TimeoutIncumbent,
            objective: inc.objective,
            values: inc.values,
            stats,
        }),
        (None, false) => Ok(SolveResult::without_solution(SolveStatus::Infeasible, stats)),
        (None, true) => {
            Ok(SolveResult::without_solution(SolveStatus::InfeasibleOrUnknown, stats))
        }
    }
}

fn sane_limit(limit: f64) -> bool {
    limit.is_finite() && limit > 0.0
}

fn most_fractional(values: &[f64], binaries: &[usize]) -> (usize, f64) {
    let mut best: Option<(usize, f64, f64)> = None; // (var, value, distance)
    for &b in binaries {
        let v = values[b];
        let dist = (v - v.round()).abs();
        if dist <= INTEGRALITY_TOL {
            continue;
        }
        let closeness = (v - 0.5).abs();
        let better = match best {
            None => true,
            Some((bv, _, bc)) => closeness < bc - 0.0 || (closeness == bc && b < bv),
        };
        if better {
            best = Some((b, v, closeness));
        }
    }
    let (var, value, _) = best.expect("called on a fractional solution");
    (var, value)
}

/// Fixes the binaries to `assignment`, re-solves the continuous part, and
/// returns the repaired solution when feasible.
fn probe_assignment(
    engine: &mut SimplexEngine,
    binaries: &[usize],
    assignment: &[(usize, u8)],
    deadline: Instant,
) -> Result<Option<(f64, Vec<f64>)>> {
    apply_fixings(engine, binaries, assignment);
    let term = engine.solve(Some(deadline))?;
    Ok(match term {
        Termination::Optimal => Some((engine.objective_value(), engine.values())),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearModel, Relation, VarKind};
    use crate::solver::solve_lp;

    fn binary(m: &mut LinearModel) -> usize {
        m.add_var(None, 0.0, 1.0, VarKind::Binary)
    }

    #[test]
    fn single_binary_forced_up() {
        let mut m = LinearModel::default();
        let x = binary(&mut m);
        m.add_constraint(vec![(x, 1.0)], Relation::Ge, 0.5);
        m.objective = vec![(x, 1.0)];
        let r = solve_milp(&m, &MilpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-9);
        assert!((r.values[x] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn knapsack_style_selection() {
        // max 5a + 4b + 3c s.t. 2a + 3b + c <= 4  (as minimization)
        let mut m = LinearModel::default();
        let a = binary(&mut m);
        let b = binary(&mut m);
        let c = binary(&mut m);
        m.add_constraint(vec![(a, 2.0), (b, 3.0), (c, 1.0)], Relation::Le, 4.0);
        m.objective = vec![(a, -5.0), (b, -4.0), (c, -3.0)];
        let r = solve_milp(&m, &MilpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective + 8.0).abs() < 1e-9); // a + c
        assert!((r.values[a] - 1.0).abs() < 1e-6);
        assert!(r.values[b].abs() < 1e-6);
        assert!((r.values[c] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_integer_program() {
        // x + y = 1.5 has no binary solution but a fractional one.
        let mut m = LinearModel::default();
        let x = binary(&mut m);
        let y = binary(&mut m);
        m.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Eq, 1.5);
        m.objective = vec![(x, 1.0), (y, 1.0)];
        let r = solve_milp(&m, &MilpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn mixed_continuous_and_binary() {
        // min x + 10 s s.t. x >= 3 - 6 s, x in [0, 10]: s=1 costs 10,
        // s=0 costs 3.
        let mut m = LinearModel::default();
        let x = m.add_var(None, 0.0, 10.0, VarKind::Continuous);
        let s = binary(&mut m);
        m.add_constraint(vec![(x, 1.0), (s, 6.0)], Relation::Ge, 3.0);
        m.objective = vec![(x, 1.0), (s, 10.0)];
        let r = solve_milp(&m, &MilpOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-9);
        assert!(r.values[s].abs() < 1e-6);
    }

    /// Exhaustive oracle: fix every assignment of the binaries and solve
    /// the remaining LP, taking the best feasible objective.
    fn enumerate_milp(model: &LinearModel) -> Option<f64> {
        let binaries: Vec<usize> = model
            .variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(i, _)| i)
            .collect();
        let mut best: Option<f64> = None;
        for pattern in 0u64..(1 << binaries.len()) {
            let mut fixed = model.clone();
            for (bit, &b) in binaries.iter().enumerate() {
                let v = ((pattern >> bit) & 1) as f64;
                fixed.variables[b].lower = v;
                fixed.variables[b].upper = v;
            }
            let r = solve_lp(&fixed).unwrap();
            if r.status == SolveStatus::Optimal {
                best = Some(best.map_or(r.objective, |b: f64| b.min(r.objective)));
            }
        }
        best
    }

    #[test]
    fn random_milps_match_enumeration() {
        let mut state = 0xabcdef12u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 801) as f64 / 100.0 - 4.0
        };
        for trial in 0..60 {
            let nb = 2 + trial % 5; // up to 6 binaries
            let nc = 1 + trial % 3;
            let mut m = LinearModel::default();
            let mut vars = Vec::new();
            for _ in 0..nb {
                vars.push(binary(&mut m));
            }
            for _ in 0..nc {
                let lo = next().min(0.0);
                vars.push(m.add_var(None, lo, lo + 3.0 + next().abs(), VarKind::Continuous));
            }
            let n_rows = 2 + trial % 3;
            for r in 0..n_rows {
                let terms: Vec<(usize, f64)> =
                    vars.iter().map(|&v| (v, (next() * 2.0).round() / 2.0)).collect();
                let rel = if r % 2 == 0 { Relation::Le } else { Relation::Ge };
                m.add_constraint(terms, rel, next());
            }
            m.objective = vars.iter().map(|&v| (v, next())).collect();

            let got = solve_milp(&m, &MilpOptions::default()).unwrap();
            let expect = enumerate_milp(&m);
            match expect {
                None => assert_eq!(got.status, SolveStatus::Infeasible, "trial {trial}"),
                Some(opt) => {
                    assert_eq!(got.status, SolveStatus::Optimal, "trial {trial}");
                    assert!(
                        (got.objective - opt).abs() < 1e-6,
                        "trial {trial}: got {} expected {opt}",
                        got.objective
                    );
                }
            }
        }
    }

    #[test]
    fn determinism_same_result_twice() {
        let mut m = LinearModel::default();
        let vars: Vec<usize> = (0..8).map(|_| binary(&mut m)).collect();
        for (i, &v) in vars.iter().enumerate() {
            m.add_constraint(
                vec![(v, 1.0), (vars[(i + 1) % 8], 1.0)],
                Relation::Le,
                1.0,
            );
        }
        m.objective = vars.iter().enumerate().map(|(i, &v)| (v, -((i % 3) as f64) - 1.0)).collect();
        let a = solve_milp(&m, &MilpOptions::default()).unwrap();
        let b = solve_milp(&m, &MilpOptions::default()).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.values, b.values);
        assert_eq!(a.stats.nodes, b.stats.nodes);
    }

    #[test]
    fn incumbent_hint_is_used() {
        let mut m = LinearModel::default();
        let x = binary(&mut m);
        let y = binary(&mut m);
        m.add_constraint(vec![(x, 1.0), (y, 1.0)], Relation::Ge, 1.0);
        m.objective = vec![(x, 2.0), (y, 3.0)];
        let opts = MilpOptions {
            incumbent_hint: Some(vec![(x, 1), (y, 0)]),
            ..MilpOptions::default()
        };
        let r = solve_milp(&m, &opts).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-9);
    }
}
