//! End-to-end orchestration of the five recovery methods: naive negative,
//! naive positive, naive LP, relaxed LP with sign extraction, and the
//! hierarchical MILP with region decomposition, dependency modes and
//! brightness alignment.

mod localsearch;

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{decode_dc_chain, CoeffKey, DiffChain, MaskedImage, ZSlot};
use crate::error::{Error, Result};
use crate::image::{finalize, level_shift, PixelImage, ShiftDirection};
use crate::model::{
    build_alignment_model, build_model, AlignmentStrategy, Integrality, LinearModel, ModelScope,
    RegionGrid, VarKey,
};
use crate::solver::{LinearSolver, MilpOptions, SolveStats, SolveStatus};
use crate::transform::{inverse_dct, CoeffImage, DctBasis};

/// Give up on a branch-and-bound search after this many consecutive
/// nodes without an incumbent improvement; the polished incumbent is
/// returned instead of burning the full wall budget on a bound proof.
const STALL_NODES: u64 = 50;

/// Which recovery method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    NaiveNegative,
    NaivePositive,
    NaiveLp,
    RelaxedLp,
    HierMilp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::NaiveNegative => "naive-neg",
            Method::NaivePositive => "naive-pos",
            Method::NaiveLp => "naive-lp",
            Method::RelaxedLp => "relaxed-lp",
            Method::HierMilp => "hier-milp",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Ok(match name {
            "naive-neg" => Method::NaiveNegative,
            "naive-pos" => Method::NaivePositive,
            "naive-lp" => Method::NaiveLp,
            "relaxed-lp" => Method::RelaxedLp,
            "hier-milp" => Method::HierMilp,
            other => {
                return Err(Error::Config(format!(
                    "unknown method {other:?}; valid: naive-neg, naive-pos, naive-lp, relaxed-lp, hier-milp"
                )))
            }
        })
    }
}

/// Resolution of a relaxed selector that lands exactly on zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZeroSignStrategy {
    /// 1: force the coefficient to zero.
    ForceZero,
    /// 2: take the positive candidate.
    TakeHi,
    /// 3: take the negative candidate.
    TakeLo,
    /// 4: Bernoulli(p) pick of the positive candidate.
    Bernoulli(f64),
}

impl ZeroSignStrategy {
    pub fn from_index(index: u8, p: f64) -> Result<Self> {
        Ok(match index {
            1 => ZeroSignStrategy::ForceZero,
            2 => ZeroSignStrategy::TakeHi,
            3 => ZeroSignStrategy::TakeLo,
            4 => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("Bernoulli p {p} outside [0,1]")));
                }
                ZeroSignStrategy::Bernoulli(p)
            }
            other => return Err(Error::Config(format!("zero-sign strategy {other} outside 1..=4"))),
        })
    }

    pub fn index(&self) -> u8 {
        match self {
            ZeroSignStrategy::ForceZero => 1,
            ZeroSignStrategy::TakeHi => 2,
            ZeroSignStrategy::TakeLo => 3,
            ZeroSignStrategy::Bernoulli(_) => 4,
        }
    }
}

/// How regional models treat DC differentials crossing region boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependencyMode {
    /// 0: drop the crossing differential entirely.
    Drop,
    /// 1: solve regions in raster order and substitute solved DCs.
    SolvedConstants,
    /// 2: additionally penalize pixel differences against solved regions.
    SolvedConstantsAndBoundary,
}

impl DependencyMode {
    pub fn from_index(index: u8) -> Result<Self> {
        Ok(match index {
            0 => DependencyMode::Drop,
            1 => DependencyMode::SolvedConstants,
            2 => DependencyMode::SolvedConstantsAndBoundary,
            other => return Err(Error::Config(format!("dependency mode {other} outside 0..=2"))),
        })
    }

    pub fn index(&self) -> u8 {
        match self {
            DependencyMode::Drop => 0,
            DependencyMode::SolvedConstants => 1,
            DependencyMode::SolvedConstantsAndBoundary => 2,
        }
    }
}

/// Stage-2 brightness alignment choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    None,
    GlobalMilp,
    BlockLp,
    RegionLp,
}

impl Alignment {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "none" => Alignment::None,
            "global-milp" => Alignment::GlobalMilp,
            "block-lp" => Alignment::BlockLp,
            "region-lp" => Alignment::RegionLp,
            other => {
                return Err(Error::Config(format!(
                    "unknown alignment {other:?}; valid: none, global-milp, block-lp, region-lp"
                )))
            }
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Alignment::None => "none",
            Alignment::GlobalMilp => "global-milp",
            Alignment::BlockLp => "block-lp",
            Alignment::RegionLp => "region-lp",
        }
    }
}

/// Every knob of a recovery run.
#[derive(Debug, Clone)]
pub struct RecoveryConfig {
    pub method: Method,
    /// Unknowns with both candidate magnitudes below this are zeroed
    /// before solving. The paper-backed defaults are 5 for the relaxed LP
    /// and 0 for the hierarchical MILP.
    pub threshold: f64,
    pub zero_sign: ZeroSignStrategy,
    /// Region size (height, width) in pixels for the hierarchical method.
    pub region_size: (usize, usize),
    pub dependency_mode: DependencyMode,
    pub alignment: Alignment,
    /// Per-MILP-instance wall budget, seconds.
    pub milp_time_limit: f64,
    pub seed: u64,
}

impl RecoveryConfig {
    pub fn for_method(method: Method) -> Self {
        RecoveryConfig {
            method,
            threshold: match method {
                Method::RelaxedLp | Method::NaiveLp => 5.0,
                _ => 0.0,
            },
            zero_sign: ZeroSignStrategy::ForceZero,
            region_size: (32, 32),
            dependency_mode: DependencyMode::Drop,
            alignment: Alignment::GlobalMilp,
            milp_time_limit: 600.0,
            seed: 0,
        }
    }
}

/// Run report: the recovered image plus solve accounting.
#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    pub image: PixelImage,
    /// Smoothness objective of the final whole-image reconstruction
    /// (before clamping).
    pub objective: f64,
    pub status: SolveStatus,
    pub stats: SolveStats,
}

/// The coefficient assignment a method settled on, before pixel decoding.
#[derive(Debug, Clone)]
pub struct ResolvedCoefficients {
    pub coeffs: CoeffImage,
    /// The value each mask entry resolved to (the chosen candidate, or the
    /// relaxed value for the naive LP).
    pub resolved: BTreeMap<CoeffKey, f64>,
}

fn accumulate(stats: &mut SolveStats, other: &SolveStats) {
    stats.nodes += other.nodes;
    stats.simplex_iterations += other.simplex_iterations;
    stats.wall_seconds += other.wall_seconds;
}

/// Applies the recovery-side threshold: unknowns whose candidates are both
/// below `t` in magnitude are treated as hard zeros for this run.
fn threshold_mask(masked: &MaskedImage, t: f64) -> MaskedImage {
    if t <= 0.0 {
        return masked.clone();
    }
    let mut out = masked.clone();
    let keys: Vec<CoeffKey> = out
        .mask
        .entries
        .iter()
        .filter(|(_, e)| e.lo.abs() < t && e.hi.abs() < t)
        .map(|(k, _)| *k)
        .collect();
    for key in keys {
        out.mask.entries.remove(&key);
        out.mask.forced_zero.insert(key);
        if masked.cfg.dc_prediction_mode != 0 && (key.2, key.3) == (0, 0) {
            out.chain.z[key.0 * out.coeffs.block_cols + key.1] = ZSlot::ForcedZero;
        }
    }
    out
}

/// Builds the final coefficient grid from per-entry resolutions, zeroing
/// forced entries and decoding the DC chain when differential coding is
/// active.
pub fn assemble_coefficients(
    masked: &MaskedImage,
    resolved: &BTreeMap<CoeffKey, f64>,
) -> Result<CoeffImage> {
    let mut coeffs = masked.coeffs.clone();
    let bc = coeffs.block_cols;
    for &(br, bcx, k, l) in &masked.mask.forced_zero {
        if (k, l) == (0, 0) && masked.cfg.dc_prediction_mode != 0 {
            continue; // handled through the chain
        }
        coeffs.set(br, bcx, k, l, 0.0);
    }
    if masked.cfg.dc_prediction_mode == 0 {
        for (&(br, bcx, k, l), &v) in resolved {
            coeffs.set(br, bcx, k, l, v);
        }
        return Ok(coeffs);
    }
    // Differential coding: complete the chain, decode the DCs.
    let mut chain = DiffChain {
        mode: masked.chain.mode,
        z: masked.chain.z.clone(),
    };
    for (&(br, bcx, k, l), &v) in resolved {
        if (k, l) == (0, 0) {
            chain.z[br * bc + bcx] = ZSlot::Known(v);
        } else {
            coeffs.set(br, bcx, k, l, v);
        }
    }
    for slot in &mut chain.z {
        if matches!(slot, ZSlot::ForcedZero) {
            *slot = ZSlot::Known(0.0);
        }
        if matches!(slot, ZSlot::Unknown) {
            return Err(Error::Model("unresolved differential while assembling".into()));
        }
    }
    let dcs = decode_dc_chain(&chain, coeffs.block_rows, coeffs.block_cols)?;
    for br in 0..coeffs.block_rows {
        for bcx in 0..coeffs.block_cols {
            coeffs.set(br, bcx, 0, 0, dcs[br * bc + bcx]);
        }
    }
    Ok(coeffs)
}

/// Raw (unclamped) pixel reconstruction of a coefficient grid under the
/// coding config.
pub fn reconstruct_raw(coeffs: &CoeffImage, cfg: &crate::codec::CodingConfig, basis: &DctBasis) -> PixelImage {
    let (x_min, x_max) = if cfg.level_shift { (-128.0, 127.0) } else { (0.0, 255.0) };
    let img = inverse_dct(coeffs, basis, x_min, x_max);
    if cfg.level_shift {
        level_shift(&img, ShiftDirection::Inverse)
    } else {
        img
    }
}

fn finalize_outcome(
    masked: &MaskedImage,
    resolved: &BTreeMap<CoeffKey, f64>,
    basis: &DctBasis,
    status: SolveStatus,
    stats: SolveStats,
) -> Result<RecoveryOutcome> {
    let coeffs = assemble_coefficients(masked, resolved)?;
    let raw = reconstruct_raw(&coeffs, &masked.cfg, basis);
    let objective = crate::metrics::total_variation(&raw);
    Ok(RecoveryOutcome { image: finalize(&raw), objective, status, stats })
}

/// Naive error concealment: every unknown takes its negative (`lo`) or
/// positive (`hi`) candidate.
pub fn recover_naive(masked: &MaskedImage, positive: bool, basis: &DctBasis) -> Result<RecoveryOutcome> {
    let resolved: BTreeMap<CoeffKey, f64> = masked
        .mask
        .entries
        .iter()
        .map(|(&k, e)| (k, if positive { e.hi } else { e.lo }))
        .collect();
    finalize_outcome(masked, &resolved, basis, SolveStatus::Optimal, SolveStats::default())
}

/// Naive LP: solve the relaxed whole-image model and keep the relaxed
/// coefficient values as-is (no sign extraction, magnitudes not restored).
pub fn recover_naive_lp(
    masked: &MaskedImage,
    recovery: &RecoveryConfig,
    solver: &dyn LinearSolver,
    basis: &DctBasis,
) -> Result<RecoveryOutcome> {
    let work = threshold_mask(masked, recovery.threshold);
    let scope = ModelScope::full_image(&work.coeffs);
    let model = build_model(&work, &scope, Integrality::LpRelaxed, basis)?;
    let sol = solver.solve_lp(&model)?;
    if !sol.status.has_solution() {
        return Err(Error::Solver(format!("relaxation failed: {}", sol.status.as_str())));
    }
    let resolved = read_unknown_values(&model, &work, &sol.values);
    let mut outcome = finalize_outcome(&work, &resolved, basis, sol.status, sol.stats)?;
    outcome.stats = sol.stats;
    Ok(outcome)
}

/// Relaxed LP with sign extraction (Method 1): solve the relaxation, then
/// snap every unknown to the candidate on the side of its relaxed value,
/// applying the zero-sign strategy to near-zero relaxed values.
pub fn recover_relaxed_lp(
    masked: &MaskedImage,
    recovery: &RecoveryConfig,
    solver: &dyn LinearSolver,
    basis: &DctBasis,
) -> Result<RecoveryOutcome> {
    let work = threshold_mask(masked, recovery.threshold);
    let scope = ModelScope::full_image(&work.coeffs);
    let model = build_model(&work, &scope, Integrality::LpRelaxed, basis)?;
    let sol = solver.solve_lp(&model)?;
    if !sol.status.has_solution() {
        return Err(Error::Solver(format!("relaxation failed: {}", sol.status.as_str())));
    }
    let relaxed = read_unknown_values(&model, &work, &sol.values);
    let mut rng = ChaCha8Rng::seed_from_u64(recovery.seed);
    let mut resolved = BTreeMap::new();
    for (key, value) in relaxed {
        let entry = &work.mask.entries[&key];
        let v = if value > 1e-9 {
            entry.hi
        } else if value < -1e-9 {
            entry.lo
        } else {
            match recovery.zero_sign {
                ZeroSignStrategy::ForceZero => 0.0,
                ZeroSignStrategy::TakeHi => entry.hi,
                ZeroSignStrategy::TakeLo => entry.lo,
                ZeroSignStrategy::Bernoulli(p) => {
                    if rng.random_bool(p) {
                        entry.hi
                    } else {
                        entry.lo
                    }
                }
            }
        };
        resolved.insert(key, v);
    }
    let mut outcome = finalize_outcome(&work, &resolved, basis, sol.status, sol.stats)?;
    outcome.stats = sol.stats;
    Ok(outcome)
}

/// Reads the solved value of every open unknown out of an LP/MILP solution.
fn read_unknown_values(
    model: &LinearModel,
    masked: &MaskedImage,
    values: &[f64],
) -> BTreeMap<CoeffKey, f64> {
    let mut out = BTreeMap::new();
    for &key in masked.mask.entries.keys() {
        let (br, bc, k, l) = key;
        let var = if masked.cfg.dc_prediction_mode != 0 && (k, l) == (0, 0) {
            model.var(VarKey::Diff { br, bc })
        } else {
            model.var(VarKey::Coeff { br, bc, k, l })
        };
        if let Some(id) = var {
            out.insert(key, values[id]);
        }
    }
    out
}

/// Solves the scope's relaxation and extracts candidate signs from the
/// relaxed values, the zero side resolving to the smaller magnitude.
fn relaxation_signs(
    masked: &MaskedImage,
    scope: &ModelScope,
    milp_model: &LinearModel,
    solver: &dyn LinearSolver,
    basis: &DctBasis,
) -> Result<Option<BTreeMap<CoeffKey, f64>>> {
    let relaxed = build_model(masked, scope, Integrality::LpRelaxed, basis)?;
    let sol = solver.solve_lp(&relaxed)?;
    if !sol.status.has_solution() {
        return Ok(None);
    }
    let mut out = BTreeMap::new();
    for (&key, entry) in &masked.mask.entries {
        let (br, bc, k, l) = key;
        // Only unknowns that are open in the MILP model participate.
        if milp_model.var(VarKey::Selector { br, bc, k, l }).is_none() {
            continue;
        }
        let var = if masked.cfg.dc_prediction_mode != 0 && (k, l) == (0, 0) {
            relaxed.var(VarKey::Diff { br, bc })
        } else {
            relaxed.var(VarKey::Coeff { br, bc, k, l })
        };
        let value = match var {
            Some(id) => sol.values[id],
            None => continue,
        };
        out.insert(key, if value >= 0.0 { entry.hi } else { entry.lo });
    }
    Ok(Some(out))
}

/// Converts a candidate assignment into selector fixings for the solver.
fn assignment_to_hint(
    model: &LinearModel,
    masked: &MaskedImage,
    assignment: &BTreeMap<CoeffKey, f64>,
) -> Vec<(usize, u8)> {
    assignment
        .iter()
        .filter_map(|(&(br, bc, k, l), &v)| {
            let sel = model.var(VarKey::Selector { br, bc, k, l })?;
            let entry = &masked.mask.entries[&(br, bc, k, l)];
            Some((sel, if (v - entry.hi).abs() <= (v - entry.lo).abs() { 1u8 } else { 0 }))
        })
        .collect()
}

/// Snaps each open unknown to the candidate chosen by its selector value.
fn read_selector_choices(
    model: &LinearModel,
    masked: &MaskedImage,
    values: &[f64],
) -> BTreeMap<CoeffKey, f64> {
    let mut out = BTreeMap::new();
    for (&key, entry) in &masked.mask.entries {
        let (br, bc, k, l) = key;
        if let Some(id) = model.var(VarKey::Selector { br, bc, k, l }) {
            out.insert(key, if values[id] >= 0.5 { entry.hi } else { entry.lo });
        }
    }
    out
}

/// Hierarchical MILP (Method 2): stage 1 solves a MILP per region under
/// the configured dependency mode; stage 2 aligns brightness globally.
pub fn recover_hier_milp(
    masked: &MaskedImage,
    recovery: &RecoveryConfig,
    solver: &dyn LinearSolver,
    basis: &DctBasis,
) -> Result<RecoveryOutcome> {
    let work = threshold_mask(masked, recovery.threshold);
    let co = &work.coeffs;
    let n = co.n;
    let (rh, rw) = recovery.region_size;
    let grid = RegionGrid::new(co.width(), co.height(), rh, rw, n)?;
    validate_region_shape(&work, recovery, &grid, co.width())?;

    let mut stats = SolveStats::default();
    let mut worst_status = SolveStatus::Optimal;
    let mut resolved: BTreeMap<CoeffKey, f64> = BTreeMap::new();
    // Pixel values of already-solved regions, for dependency mode 2.
    let mut solved_pixels: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut solved_dcs: BTreeMap<(usize, usize), f64> = BTreeMap::new();

    for rr in 0..grid.rows {
        for rc in 0..grid.cols {
            let top = rr * rh;
            let left = rc * rw;
            let mut scope = ModelScope {
                top,
                left,
                height: rh,
                width: rw,
                ..ModelScope::default()
            };
            match recovery.dependency_mode {
                DependencyMode::Drop => scope.drop_cross_chain = true,
                DependencyMode::SolvedConstants => {
                    scope.solved_dcs = solved_dcs.clone();
                }
                DependencyMode::SolvedConstantsAndBoundary => {
                    scope.solved_dcs = solved_dcs.clone();
                    // Solved pixels adjacent to this region.
                    for i in top..top + rh {
                        if left > 0 {
                            if let Some(&v) = solved_pixels.get(&(i, left - 1)) {
                                scope.boundary_pixels.insert((i, left - 1), v);
                            }
                        }
                        if let Some(&v) = solved_pixels.get(&(i, left + rw)) {
                            scope.boundary_pixels.insert((i, left + rw), v);
                        }
                    }
                    for j in left..left + rw {
                        if top > 0 {
                            if let Some(&v) = solved_pixels.get(&(top - 1, j)) {
                                scope.boundary_pixels.insert((top - 1, j), v);
                            }
                        }
                        if let Some(&v) = solved_pixels.get(&(top + rh, j)) {
                            scope.boundary_pixels.insert((top + rh, j), v);
                        }
                    }
                }
            }
            let model = build_model(&work, &scope, Integrality::Milp, basis)?;
            // Seed the search with a strong incumbent: extract signs from
            // the region's relaxation, then hill-climb on the true
            // objective.
            let hint = match relaxation_signs(&work, &scope, &model, solver, basis)? {
                Some(mut guess) => {
                    localsearch::improve_assignment(&work, &scope, basis, &mut guess);
                    Some(assignment_to_hint(&model, &work, &guess))
                }
                None => None,
            };
            let opts = MilpOptions {
                time_limit: recovery.milp_time_limit,
                seed: region_seed(recovery.seed, rr * grid.cols + rc),
                incumbent_hint: hint,
                stall_node_limit: Some(STALL_NODES),
                ..MilpOptions::default()
            };
            let sol = solver.solve_milp(&model, &opts)?;
            accumulate(&mut stats, &sol.stats);
            if !sol.status.has_solution() {
                return Err(Error::Solver(format!(
                    "region ({rr},{rc}) MILP ended without a solution: {}",
                    sol.status.as_str()
                )));
            }
            if sol.status == SolveStatus::TimeoutIncumbent {
                worst_status = SolveStatus::TimeoutIncumbent;
            }
            resolved.extend(read_selector_choices(&model, &work, &sol.values));
            // Record solved pixels and DCs for later regions.
            if recovery.dependency_mode != DependencyMode::Drop {
                for i in top..top + rh {
                    for j in left..left + rw {
                        let id = model.var(VarKey::Pixel { i, j }).unwrap();
                        solved_pixels.insert((i, j), sol.values[id]);
                    }
                }
                for br in top / n..(top + rh) / n {
                    for bc in left / n..(left + rw) / n {
                        let dc = match model.var(VarKey::Coeff { br, bc, k: 0, l: 0 }) {
                            Some(id) => sol.values[id],
                            None => work.coeffs.get(br, bc, 0, 0),
                        };
                        solved_dcs.insert((br, bc), dc);
                    }
                }
            }
        }
    }

    // Under dependency mode 0 with differential coding, differentials whose
    // chain link was dropped have no selector in any region model; stage 2
    // re-opens them. Until then give them a neutral resolution so stage-1
    // assembly is well defined: the smaller-magnitude candidate.
    let mut stage1_resolved = resolved.clone();
    if work.cfg.dc_prediction_mode != 0 {
        for (&key, entry) in &work.mask.entries {
            stage1_resolved.entry(key).or_insert_with(|| {
                if entry.hi.abs() <= entry.lo.abs() {
                    entry.hi
                } else {
                    entry.lo
                }
            });
        }
    }
    let stage1 = assemble_coefficients(&work, &stage1_resolved)?;

    // Stage 2: global brightness alignment.
    let aligned = match recovery.alignment {
        Alignment::None => stage1,
        Alignment::GlobalMilp => {
            let dc_keys: Vec<CoeffKey> = work
                .mask
                .entries
                .keys()
                .filter(|k| (k.2, k.3) == (0, 0))
                .copied()
                .collect();
            if dc_keys.is_empty() {
                stage1
            } else {
                let model =
                    build_alignment_model(&stage1, &work, AlignmentStrategy::GlobalMilp, None, basis)?;
                // Seed the search with the stage-1 choices, polished by a
                // hill climb over the re-opened DC selectors.
                let mut align_scope = ModelScope::full_image(&work.coeffs);
                for key in work.mask.entries.keys() {
                    if (key.2, key.3) != (0, 0) {
                        align_scope
                            .fixed_unknowns
                            .insert(*key, stage1.get(key.0, key.1, key.2, key.3));
                    }
                }
                let mut guess: BTreeMap<CoeffKey, f64> = dc_keys
                    .iter()
                    .map(|&key| (key, stage1_resolved[&key]))
                    .collect();
                localsearch::improve_assignment(&work, &align_scope, basis, &mut guess);
                let hint = assignment_to_hint(&model, &work, &guess);
                let opts = MilpOptions {
                    time_limit: recovery.milp_time_limit,
                    seed: region_seed(recovery.seed, grid.count()),
                    incumbent_hint: Some(hint),
                    stall_node_limit: Some(STALL_NODES),
                    ..MilpOptions::default()
                };
                let sol = solver.solve_milp(&model, &opts)?;
                accumulate(&mut stats, &sol.stats);
                if !sol.status.has_solution() {
                    return Err(Error::Solver(format!(
                        "alignment MILP ended without a solution: {}",
                        sol.status.as_str()
                    )));
                }
                if sol.status == SolveStatus::TimeoutIncumbent {
                    worst_status = SolveStatus::TimeoutIncumbent;
                }
                let mut final_resolved = stage1_resolved.clone();
                final_resolved.extend(read_selector_choices(&model, &work, &sol.values));
                assemble_coefficients(&work, &final_resolved)?
            }
        }
        Alignment::BlockLp => {
            let model = build_alignment_model(&stage1, &work, AlignmentStrategy::BlockLp, None, basis)?;
            let sol = solver.solve_lp(&model)?;
            accumulate(&mut stats, &sol.stats);
            if !sol.status.has_solution() {
                return Err(Error::Solver(format!(
                    "block-LP alignment failed: {}",
                    sol.status.as_str()
                )));
            }
            let mut out = stage1.clone();
            for br in 0..out.block_rows {
                for bc in 0..out.block_cols {
                    let id = model.var(VarKey::Coeff { br, bc, k: 0, l: 0 }).unwrap();
                    out.set(br, bc, 0, 0, sol.values[id]);
                }
            }
            out
        }
        Alignment::RegionLp => {
            if grid.count() < 2 {
                stage1
            } else {
                let model = build_alignment_model(
                    &stage1,
                    &work,
                    AlignmentStrategy::RegionLp,
                    Some(&grid),
                    basis,
                )?;
                let sol = solver.solve_lp(&model)?;
                accumulate(&mut stats, &sol.stats);
                if !sol.status.has_solution() {
                    return Err(Error::Solver(format!(
                        "region-LP alignment failed: {}",
                        sol.status.as_str()
                    )));
                }
                let mut out = stage1.clone();
                for br in 0..out.block_rows {
                    for bc in 0..out.block_cols {
                        let r = grid.region_of_block(br, bc, n);
                        let off = sol.values[model.var(VarKey::RegionOffset { region: r }).unwrap()];
                        let dc = out.get(br, bc, 0, 0);
                        out.set(br, bc, 0, 0, dc + off);
                    }
                }
                out
            }
        }
    };

    let raw = reconstruct_raw(&aligned, &work.cfg, basis);
    let objective = crate::metrics::total_variation(&raw);
    Ok(RecoveryOutcome { image: finalize(&raw), objective, status: worst_status, stats })
}

/// Region shapes that break the raster-order data dependency are rejected:
/// under DC prediction mode 2, a region covering more than one block row
/// must span the full image width.
fn validate_region_shape(
    masked: &MaskedImage,
    recovery: &RecoveryConfig,
    grid: &RegionGrid,
    image_width: usize,
) -> Result<()> {
    if recovery.dependency_mode == DependencyMode::Drop {
        return Ok(());
    }
    if masked.cfg.dc_prediction_mode == 2 {
        let n = masked.coeffs.n;
        let single_block_row = grid.region_height == n;
        let full_width = grid.region_width == image_width;
        if !single_block_row && !full_width {
            return Err(Error::Config(format!(
                "DC prediction mode 2 with dependency mode {} needs regions of shape {n}xk*{n} or k*{n}x{image_width}",
                recovery.dependency_mode.index()
            )));
        }
    }
    Ok(())
}

fn region_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 over the pair keeps regional randomness independent.
    let mut z = seed ^ (index as u64).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Dispatches to the configured method.
pub fn recover(
    masked: &MaskedImage,
    recovery: &RecoveryConfig,
    solver: &dyn LinearSolver,
    basis: &DctBasis,
) -> Result<RecoveryOutcome> {
    match recovery.method {
        Method::NaiveNegative => recover_naive(masked, false, basis),
        Method::NaivePositive => recover_naive(masked, true, basis),
        Method::NaiveLp => recover_naive_lp(masked, recovery, solver, basis),
        Method::RelaxedLp => recover_relaxed_lp(masked, recovery, solver, basis),
        Method::HierMilp => recover_hier_milp(masked, recovery, solver, basis),
    }
}
