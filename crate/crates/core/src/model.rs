//! Builds the solver-neutral linear model for any scope: pixel variables,
//! coefficient and sign-selector variables, differential variables,
//! auxiliary neighbor-difference variables, and the smoothness objective.
//!
//! A sign choice between candidates `(lo, hi)` is encoded with a selector
//! `s` in `{0, 1}` (binary, or `[0, 1]` when relaxed) through
//! `y = lo + s * (hi - lo)`; for plain symmetric candidates this reproduces
//! the interval `-|y| <= y <= |y|`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::codec::{CoeffKey, MaskedImage, ZSlot};
use crate::error::{Error, Result};
use crate::transform::{inverse_dct, quant_error_bound, CoeffImage, DctBasis};

pub type VarId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

/// Semantic identity of a model variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VarKey {
    /// Pixel at absolute image coordinates.
    Pixel { i: usize, j: usize },
    /// Coefficient (k, l) of block (br, bc); (0, 0) is the DC.
    Coeff { br: usize, bc: usize, k: usize, l: usize },
    /// Sign selector of the unknown at this coefficient position.
    Selector { br: usize, bc: usize, k: usize, l: usize },
    /// DC differential z of block (br, bc).
    Diff { br: usize, bc: usize },
    /// Neighbor-difference auxiliary for the pair starting at pixel (i, j),
    /// going down when `down`, right otherwise.
    Aux { i: usize, j: usize, down: bool },
    /// Per-region brightness offset of the region-LP alignment.
    RegionOffset { region: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Variables with bounds and integrality marks, linear constraints, and a
/// linear objective to minimize.
#[derive(Debug, Clone, Default)]
pub struct LinearModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(VarId, f64)>,
    pub var_index: BTreeMap<VarKey, VarId>,
    /// Advisory starting basis as (constraint row, variable) pivots; rows
    /// not listed start on their slack. Solvers may ignore it.
    pub basis_hint: Vec<(usize, VarId)>,
    /// Advisory nonbasic start sides: these variables begin at their upper
    /// bound instead of the default lower.
    pub start_upper: Vec<VarId>,
}

impl LinearModel {
    pub fn add_var(&mut self, key: Option<VarKey>, lower: f64, upper: f64, kind: VarKind) -> VarId {
        debug_assert!(lower <= upper);
        debug_assert!(kind != VarKind::Binary || (lower == 0.0 && upper == 1.0));
        let id = self.variables.len();
        self.variables.push(Variable { lower, upper, kind });
        if let Some(k) = key {
            let prev = self.var_index.insert(k, id);
            debug_assert!(prev.is_none(), "duplicate variable key {k:?}");
        }
        id
    }

    pub fn add_constraint(&mut self, terms: Vec<(VarId, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(terms.iter().all(|&(v, _)| v < self.variables.len()));
        self.constraints.push(Constraint { terms, relation, rhs });
    }

    pub fn var(&self, key: VarKey) -> Option<VarId> {
        self.var_index.get(&key).copied()
    }

    pub fn num_binaries(&self) -> usize {
        self.variables.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    /// Line-oriented dump for external-solver cross-checks: one variable or
    /// constraint per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let keys: BTreeMap<VarId, VarKey> =
            self.var_index.iter().map(|(&k, &v)| (v, k)).collect();
        for (id, v) in self.variables.iter().enumerate() {
            let kind = match v.kind {
                VarKind::Continuous => "continuous",
                VarKind::Binary => "binary",
            };
            let _ = write!(out, "var {id} {:e} {:e} {kind}", v.lower, v.upper);
            if let Some(k) = keys.get(&id) {
                let _ = write!(out, " {k:?}");
            }
            out.push('\n');
        }
        out.push_str("min");
        for &(v, c) in &self.objective {
            let _ = write!(out, " {v}:{c:e}");
        }
        out.push('\n');
        for c in &self.constraints {
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = write!(out, "row {rel} {:e}", c.rhs);
            for &(v, coef) in &c.terms {
                let _ = write!(out, " {v}:{coef:e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Whether selectors are binary or relaxed to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrality {
    Milp,
    LpRelaxed,
}

/// The part of the image a model covers, plus everything already decided
/// outside it.
#[derive(Debug, Clone, Default)]
pub struct ModelScope {
    /// Block-aligned pixel rectangle, absolute coordinates.
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    /// Solved pixel values adjacent to the rectangle; pairs crossing into
    /// them enter the objective with the solved side constant.
    pub boundary_pixels: BTreeMap<(usize, usize), f64>,
    /// Unknown entries resolved to fixed values (not re-opened).
    pub fixed_unknowns: BTreeMap<CoeffKey, f64>,
    /// Solved DC values of blocks outside the scope, available to chain
    /// links that cross the boundary.
    pub solved_dcs: BTreeMap<(usize, usize), f64>,
    /// Drop chain links whose predecessor is unavailable instead of
    /// erroring; the encoded difference is then not exploited.
    pub drop_cross_chain: bool,
}

impl ModelScope {
    pub fn full_image(coeffs: &CoeffImage) -> Self {
        ModelScope {
            top: 0,
            left: 0,
            height: coeffs.height(),
            width: coeffs.width(),
            ..ModelScope::default()
        }
    }
}

fn pixel_range(cfg: &crate::codec::CodingConfig) -> (f64, f64) {
    if cfg.level_shift {
        (-128.0, 127.0)
    } else {
        (0.0, 255.0)
    }
}

/// How a coefficient slot enters the pixel equations, plus its value at
/// the advisory crash point (nonbasic variables at their default bounds).
enum SlotExpr {
    Const(f64),
    Var(VarId),
}

struct Slot {
    k: usize,
    l: usize,
    expr: SlotExpr,
    estimate: f64,
}

/// Builds the smoothness-minimization model over `scope`.
///
/// Every open unknown gets a selector (binary under `Milp`, `[0,1]` under
/// `LpRelaxed`) linked to its coefficient or differential variable; known
/// coefficients fold into constants unless the quantization box relaxation
/// is active; differential coding adds one chain equation per block whose
/// predecessor is available.
pub fn build_model(
    masked: &MaskedImage,
    scope: &ModelScope,
    integrality: Integrality,
    basis: &DctBasis,
) -> Result<LinearModel> {
    let co = &masked.coeffs;
    let cfg = &masked.cfg;
    let n = co.n;
    if scope.top % n != 0 || scope.left % n != 0 || scope.height % n != 0 || scope.width % n != 0 {
        return Err(Error::Shape("scope rectangle must be block-aligned".into()));
    }
    if scope.top + scope.height > co.height() || scope.left + scope.width > co.width() {
        return Err(Error::Shape("scope extends outside the image".into()));
    }
    let (x_min, x_max) = pixel_range(cfg);
    let eps = match (&cfg.quant, cfg.relax_pixels) {
        (Some(q), true) => Some(quant_error_bound(q, basis)),
        _ => None,
    };

    let mut model = LinearModel::default();

    // Pixel variables.
    for i in scope.top..scope.top + scope.height {
        for j in scope.left..scope.left + scope.width {
            let (lo, hi) = match &eps {
                Some(e) => {
                    let widen = e[(i % n) * n + (j % n)] + 1.0;
                    (x_min - widen, x_max + widen)
                }
                None => (x_min, x_max),
            };
            model.add_var(Some(VarKey::Pixel { i, j }), lo, hi, VarKind::Continuous);
        }
    }

    let br0 = scope.top / n;
    let bc0 = scope.left / n;
    let brows = scope.height / n;
    let bcols = scope.width / n;
    let in_scope_block =
        |br: usize, bc: usize| br >= br0 && br < br0 + brows && bc >= bc0 && bc < bc0 + bcols;

    // Reject open unknowns outside the scope.
    for key in masked.mask.entries.keys() {
        if !in_scope_block(key.0, key.1) && !scope.fixed_unknowns.contains_key(key) {
            // Entries outside the scope are simply absent from this model;
            // they are neither open nor fixed here. Only an explicit demand
            // to open them would be an error, which cannot be expressed.
        }
    }

    let chained = cfg.dc_prediction_mode != 0;

    // Per-block slot expressions for the pixel equations.
    let mut slot_exprs: BTreeMap<(usize, usize), Vec<Slot>> = BTreeMap::new();
    // Advisory crash basis: variables pivoting the rows they define.
    let mut hints: Vec<(usize, VarId)> = Vec::new();
    let mut start_upper: Vec<VarId> = Vec::new();
    // Blocks whose chain link was dropped get their free DC pivoted into
    // the block's first pixel equation instead.
    let mut dc_pixel_pivot: BTreeMap<(usize, usize), VarId> = BTreeMap::new();
    // Crash-point DC estimates per block, filled by the chain pass.
    let mut dc_estimate: BTreeMap<(usize, usize), f64> = BTreeMap::new();

    // DC variables under differential coding, created for every block in
    // scope before chain rows reference them.
    if chained {
        for br in br0..br0 + brows {
            for bc in bc0..bc0 + bcols {
                model.add_var(
                    Some(VarKey::Coeff { br, bc, k: 0, l: 0 }),
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    VarKind::Continuous,
                );
            }
        }
    }

    let selector_kind = match integrality {
        Integrality::Milp => VarKind::Binary,
        Integrality::LpRelaxed => VarKind::Continuous,
    };
    let add_selector = |model: &mut LinearModel, key: VarKey| -> VarId {
        match selector_kind {
            VarKind::Binary => model.add_var(Some(key), 0.0, 1.0, VarKind::Binary),
            VarKind::Continuous => model.add_var(Some(key), 0.0, 1.0, VarKind::Continuous),
        }
    };

    for br in br0..br0 + brows {
        for bc in bc0..bc0 + bcols {
            let mut exprs = Vec::new();
            for k in 0..n {
                for l in 0..n {
                    let key = (br, bc, k, l);
                    let is_z_slot = chained && (k, l) == (0, 0);
                    if is_z_slot {
                        // The DC variable participates directly; chain rows
                        // are added below.
                        let dc = model.var(VarKey::Coeff { br, bc, k: 0, l: 0 }).unwrap();
                        exprs.push(Slot { k, l, expr: SlotExpr::Var(dc), estimate: 0.0 });
                        continue;
                    }
                    if masked.mask.forced_zero.contains(&key) {
                        exprs.push(Slot { k, l, expr: SlotExpr::Const(0.0), estimate: 0.0 });
                        continue;
                    }
                    if let Some(entry) = masked.mask.entries.get(&key) {
                        if let Some(&v) = scope.fixed_unknowns.get(&key) {
                            exprs.push(Slot { k, l, expr: SlotExpr::Const(v), estimate: v });
                            continue;
                        }
                        // Open unknown: coefficient variable plus selector.
                        let (lo, hi) = (entry.lo, entry.hi);
                        let y = model.add_var(
                            Some(VarKey::Coeff { br, bc, k, l }),
                            lo,
                            hi,
                            VarKind::Continuous,
                        );
                        let s = add_selector(&mut model, VarKey::Selector { br, bc, k, l });
                        // y - (hi - lo) s = lo
                        model.add_constraint(
                            vec![(y, 1.0), (s, -(hi - lo))],
                            Relation::Eq,
                            lo,
                        );
                        hints.push((model.constraints.len() - 1, y));
                        // An unshifted DC is an average of nonnegative
                        // samples: its sign is known to be positive, so
                        // start the search there.
                        let positive_dc = (k, l) == (0, 0) && !chained && !cfg.level_shift;
                        if positive_dc {
                            start_upper.push(s);
                        }
                        exprs.push(Slot {
                            k,
                            l,
                            expr: SlotExpr::Var(y),
                            estimate: if positive_dc { hi } else { lo },
                        });
                        continue;
                    }
                    // Known coefficient.
                    let v = co.get(br, bc, k, l);
                    match (&cfg.quant, cfg.relax_coeffs) {
                        (Some(q), true) => {
                            let half = q.step(k, l) / 2.0;
                            let y = model.add_var(
                                Some(VarKey::Coeff { br, bc, k, l }),
                                v - half,
                                v + half,
                                VarKind::Continuous,
                            );
                            exprs.push(Slot { k, l, expr: SlotExpr::Var(y), estimate: v - half });
                        }
                        _ => exprs.push(Slot { k, l, expr: SlotExpr::Const(v), estimate: v }),
                    }
                }
            }
            slot_exprs.insert((br, bc), exprs);
        }
    }

    // Chain rows: DC(b) - predictor(b) = z(b).
    if chained {
        let bcols_img = co.block_cols;
        for br in br0..br0 + brows {
            for bc in bc0..bc0 + bcols {
                let mode = cfg.dc_prediction_mode;
                // Predictor terms as (block, weight); empty for chain heads.
                let pred: Vec<((usize, usize), f64)> = match mode {
                    1 => {
                        if bc == 0 {
                            vec![]
                        } else {
                            vec![((br, bc - 1), 1.0)]
                        }
                    }
                    2 => {
                        if br == 0 && bc == 0 {
                            vec![]
                        } else if bc == 0 {
                            vec![((br - 1, bcols_img - 1), 1.0)]
                        } else {
                            vec![((br, bc - 1), 1.0)]
                        }
                    }
                    3 => match (br, bc) {
                        (0, 0) => vec![],
                        (0, _) => vec![((0, bc - 1), 1.0)],
                        (_, 0) => vec![((br - 1, 0), 1.0)],
                        _ => vec![((br - 1, bc), 0.5), ((br, bc - 1), 0.5)],
                    },
                    _ => unreachable!(),
                };
                // Resolve predictor blocks to variables or constants, and
                // estimate the predictor at the crash point.
                let dc_var = model.var(VarKey::Coeff { br, bc, k: 0, l: 0 }).unwrap();
                let mut terms = vec![(dc_var, 1.0)];
                let mut rhs = 0.0;
                let mut available = true;
                let mut pred_estimate = 0.0;
                for ((pr, pc), w) in pred {
                    pred_estimate += w
                        * dc_estimate
                            .get(&(pr, pc))
                            .or_else(|| scope.solved_dcs.get(&(pr, pc)))
                            .copied()
                            .unwrap_or(0.0);
                    if in_scope_block(pr, pc) {
                        let v = model.var(VarKey::Coeff { br: pr, bc: pc, k: 0, l: 0 }).unwrap();
                        terms.push((v, -w));
                    } else if let Some(&dc) = scope.solved_dcs.get(&(pr, pc)) {
                        rhs += w * dc;
                    } else if scope.drop_cross_chain {
                        available = false;
                    } else {
                        return Err(Error::Model(format!(
                            "chain of block ({br},{bc}) depends on block ({pr},{pc}) outside the scope; \
                             provide its solved DC or set the drop directive"
                        )));
                    }
                }
                let slot = br * bcols_img + bc;
                let key = (br, bc, 0, 0);
                let z_estimate = match masked.chain.z[slot] {
                    ZSlot::Known(z) => z,
                    ZSlot::ForcedZero => 0.0,
                    ZSlot::Unknown => match scope.fixed_unknowns.get(&key) {
                        Some(&v) => v,
                        None => masked.mask.entries.get(&key).map(|e| e.lo).unwrap_or(0.0),
                    },
                };
                dc_estimate.insert((br, bc), pred_estimate + z_estimate);
                if !available {
                    dc_pixel_pivot.insert((br, bc), dc_var);
                    continue;
                }
                match masked.chain.z[slot] {
                    ZSlot::Known(z) => {
                        model.add_constraint(terms, Relation::Eq, rhs + z);
                        hints.push((model.constraints.len() - 1, dc_var));
                    }
                    ZSlot::ForcedZero => {
                        model.add_constraint(terms, Relation::Eq, rhs);
                        hints.push((model.constraints.len() - 1, dc_var));
                    }
                    ZSlot::Unknown => {
                        if let Some(&v) = scope.fixed_unknowns.get(&key) {
                            model.add_constraint(terms, Relation::Eq, rhs + v);
                            hints.push((model.constraints.len() - 1, dc_var));
                        } else {
                            let entry = masked.mask.entries.get(&key).ok_or_else(|| {
                                Error::Model(format!("unknown z at ({br},{bc}) missing mask entry"))
                            })?;
                            let (lo, hi) = (entry.lo, entry.hi);
                            let z = model.add_var(
                                Some(VarKey::Diff { br, bc }),
                                lo,
                                hi,
                                VarKind::Continuous,
                            );
                            let s = add_selector(&mut model, VarKey::Selector { br, bc, k: 0, l: 0 });
                            model.add_constraint(
                                vec![(z, 1.0), (s, -(hi - lo))],
                                Relation::Eq,
                                lo,
                            );
                            hints.push((model.constraints.len() - 1, z));
                            terms.push((z, -1.0));
                            model.add_constraint(terms, Relation::Eq, rhs);
                            hints.push((model.constraints.len() - 1, dc_var));
                        }
                    }
                }
            }
        }
    }

    // Pixel equations: x(i,j) - sum of variable slot contributions = known part.
    let mut pixel_estimates: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for br in br0..br0 + brows {
        for bc in bc0..bc0 + bcols {
            let exprs = &slot_exprs[&(br, bc)];
            for i in 0..n {
                for j in 0..n {
                    let x = model
                        .var(VarKey::Pixel { i: br * n + i, j: bc * n + j })
                        .unwrap();
                    let mut terms = vec![(x, 1.0)];
                    let mut rhs = 0.0;
                    let mut estimate = 0.0;
                    for slot in exprs {
                        let a = basis.weight(i, j, slot.k, slot.l);
                        if a == 0.0 {
                            continue;
                        }
                        let est = if chained && (slot.k, slot.l) == (0, 0) {
                            dc_estimate[&(br, bc)]
                        } else {
                            slot.estimate
                        };
                        estimate += a * est;
                        match slot.expr {
                            SlotExpr::Const(v) => rhs += a * v,
                            SlotExpr::Var(y) => terms.push((y, -a)),
                        }
                    }
                    model.add_constraint(terms, Relation::Eq, rhs);
                    let row = model.constraints.len() - 1;
                    // A dropped-chain DC has no defining row; pivot it into
                    // the block's first pixel equation instead of the pixel.
                    match dc_pixel_pivot.get(&(br, bc)) {
                        Some(&dc) if (i, j) == (0, 0) => hints.push((row, dc)),
                        _ => hints.push((row, x)),
                    }
                    pixel_estimates.insert((br * n + i, bc * n + j), estimate);
                }
            }
        }
    }

    add_smoothness_objective(&mut model, scope, &pixel_estimates, &mut hints);
    model.basis_hint = hints;
    model.start_upper = start_upper;
    Ok(model)
}

/// Adds one auxiliary variable and the two linearization inequalities for
/// every 4-neighbor pair inside the scope and every pair crossing into a
/// boundary constant, then sets the objective to their sum. The auxiliary
/// is hinted to pivot whichever inequality binds at the estimated pixel
/// values.
fn add_smoothness_objective(
    model: &mut LinearModel,
    scope: &ModelScope,
    estimates: &BTreeMap<(usize, usize), f64>,
    hints: &mut Vec<(usize, VarId)>,
) {
    let bottom = scope.top + scope.height;
    let right = scope.left + scope.width;
    let in_scope = |i: usize, j: usize| i >= scope.top && i < bottom && j >= scope.left && j < right;
    let mut objective = Vec::new();
    let add_pair = |model: &mut LinearModel,
                    objective: &mut Vec<(VarId, f64)>,
                    hints: &mut Vec<(usize, VarId)>,
                    key: VarKey,
                    a: (usize, usize),
                    b: (usize, usize)| {
        let xa = model.var(VarKey::Pixel { i: a.0, j: a.1 });
        let xb = model.var(VarKey::Pixel { i: b.0, j: b.1 });
        let h = model.add_var(Some(key), 0.0, f64::INFINITY, VarKind::Continuous);
        objective.push((h, 1.0));
        let mut rhs_pos = 0.0;
        let mut terms_pos = vec![(h, -1.0)];
        let est_a = estimates
            .get(&a)
            .copied()
            .unwrap_or_else(|| scope.boundary_pixels.get(&a).copied().unwrap_or(0.0));
        let est_b = estimates
            .get(&b)
            .copied()
            .unwrap_or_else(|| scope.boundary_pixels.get(&b).copied().unwrap_or(0.0));
        match xa {
            Some(v) => terms_pos.push((v, 1.0)),
            None => rhs_pos -= scope.boundary_pixels[&a],
        }
        match xb {
            Some(v) => terms_pos.push((v, -1.0)),
            None => rhs_pos += scope.boundary_pixels[&b],
        }
        model.add_constraint(terms_pos.clone(), Relation::Le, rhs_pos);
        let row_pos = model.constraints.len() - 1;
        let terms_neg = terms_pos
            .iter()
            .map(|&(v, c)| if v == h { (v, c) } else { (v, -c) })
            .collect();
        model.add_constraint(terms_neg, Relation::Le, -rhs_pos);
        let row_neg = model.constraints.len() - 1;
        hints.push((if est_a >= est_b { row_pos } else { row_neg }, h));
    };

    for i in scope.top..bottom {
        for j in scope.left..right {
            // Right and down pairs originate here; left and up pairs are
            // added only when the neighbor is a boundary constant, so no
            // pair is counted twice.
            let right_n = (i, j + 1);
            if in_scope(right_n.0, right_n.1) || scope.boundary_pixels.contains_key(&right_n) {
                add_pair(
                    model,
                    &mut objective,
                    hints,
                    VarKey::Aux { i, j, down: false },
                    (i, j),
                    right_n,
                );
            }
            let down_n = (i + 1, j);
            if in_scope(down_n.0, down_n.1) || scope.boundary_pixels.contains_key(&down_n) {
                add_pair(
                    model,
                    &mut objective,
                    hints,
                    VarKey::Aux { i, j, down: true },
                    (i, j),
                    down_n,
                );
            }
            if j > 0 {
                let left_n = (i, j - 1);
                if !in_scope(left_n.0, left_n.1) && scope.boundary_pixels.contains_key(&left_n) {
                    add_pair(
                        model,
                        &mut objective,
                        hints,
                        VarKey::Aux { i, j: j - 1, down: false },
                        left_n,
                        (i, j),
                    );
                }
            }
            if i > 0 {
                let up_n = (i - 1, j);
                if !in_scope(up_n.0, up_n.1) && scope.boundary_pixels.contains_key(&up_n) {
                    add_pair(
                        model,
                        &mut objective,
                        hints,
                        VarKey::Aux { i: i - 1, j, down: true },
                        up_n,
                        (i, j),
                    );
                }
            }
        }
    }
    model.objective = objective;
}

/// Second-stage brightness alignment strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentStrategy {
    GlobalMilp,
    BlockLp,
    RegionLp,
}

/// Uniform partition of the image into solve regions, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionGrid {
    pub region_height: usize,
    pub region_width: usize,
    pub rows: usize,
    pub cols: usize,
}

impl RegionGrid {
    pub fn new(image_width: usize, image_height: usize, region_height: usize, region_width: usize, n: usize) -> Result<Self> {
        if region_height == 0
            || region_width == 0
            || region_height % n != 0
            || region_width % n != 0
        {
            return Err(Error::Config(format!(
                "region size {region_height}x{region_width} must be positive multiples of N={n}"
            )));
        }
        if image_height % region_height != 0 || image_width % region_width != 0 {
            return Err(Error::Config(format!(
                "region size {region_height}x{region_width} does not divide image {image_width}x{image_height}"
            )));
        }
        Ok(RegionGrid {
            region_height,
            region_width,
            rows: image_height / region_height,
            cols: image_width / region_width,
        })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    /// Region index containing the block at (br, bc) for block size n.
    pub fn region_of_block(&self, br: usize, bc: usize, n: usize) -> usize {
        (br * n / self.region_height) * self.cols + bc * n / self.region_width
    }
}

/// Builds the stage-2 alignment model over the whole image.
///
/// `stage1` holds fully resolved coefficient values from the first stage.
/// Strategies:
/// - `GlobalMilp`: AC values fixed, every masked DC-related selector
///   re-opened as binary.
/// - `BlockLp`: AC values fixed, one free continuous DC per block bounded
///   by pixel-range feasibility through the DC term of the transform.
/// - `RegionLp`: one brightness offset per region added to every DC in the
///   region, offsets summing to zero.
pub fn build_alignment_model(
    stage1: &CoeffImage,
    masked: &MaskedImage,
    strategy: AlignmentStrategy,
    regions: Option<&RegionGrid>,
    basis: &DctBasis,
) -> Result<LinearModel> {
    let cfg = &masked.cfg;
    let n = stage1.n;
    match strategy {
        AlignmentStrategy::GlobalMilp => {
            // Fix every non-DC unknown at its stage-1 value; re-open the
            // DC/z selectors.
            let mut fixed = BTreeMap::new();
            for key in masked.mask.entries.keys() {
                if (key.2, key.3) != (0, 0) {
                    fixed.insert(*key, stage1.get(key.0, key.1, key.2, key.3));
                }
            }
            let mut relaxed = masked.clone();
            relaxed.coeffs = stage1.clone();
            relaxed.cfg.relax_coeffs = false;
            let mut scope = ModelScope::full_image(stage1);
            scope.fixed_unknowns = fixed;
            build_model(&relaxed, &scope, Integrality::Milp, basis)
        }
        AlignmentStrategy::BlockLp => {
            let (x_min, x_max) = pixel_range(cfg);
            let eps = match (&cfg.quant, cfg.relax_pixels) {
                (Some(q), true) => Some(quant_error_bound(q, basis)),
                _ => None,
            };
            let mut model = LinearModel::default();
            let mut hints: Vec<(usize, VarId)> = Vec::new();
            let mut estimates: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            let scope = ModelScope::full_image(stage1);
            for i in 0..stage1.height() {
                for j in 0..stage1.width() {
                    let (lo, hi) = match &eps {
                        Some(e) => {
                            let widen = e[(i % n) * n + (j % n)] + 1.0;
                            (x_min - widen, x_max + widen)
                        }
                        None => (x_min, x_max),
                    };
                    model.add_var(Some(VarKey::Pixel { i, j }), lo, hi, VarKind::Continuous);
                }
            }
            for br in 0..stage1.block_rows {
                for bc in 0..stage1.block_cols {
                    // AC contribution of every pixel, with the widened pixel
                    // range turned into DC feasibility bounds via the DC
                    // term x = dc/N + ac(i,j).
                    let mut ac = vec![0.0; n * n];
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc = 0.0;
                            for k in 0..n {
                                for l in 0..n {
                                    if (k, l) != (0, 0) {
                                        acc += basis.weight(i, j, k, l) * stage1.get(br, bc, k, l);
                                    }
                                }
                            }
                            ac[i * n + j] = acc;
                        }
                    }
                    let mut dc_lo = f64::NEG_INFINITY;
                    let mut dc_hi = f64::INFINITY;
                    for i in 0..n {
                        for j in 0..n {
                            let x = model.var(VarKey::Pixel { i: br * n + i, j: bc * n + j }).unwrap();
                            let (plo, phi) =
                                (model.variables[x].lower, model.variables[x].upper);
                            dc_lo = dc_lo.max((plo - ac[i * n + j]) * n as f64);
                            dc_hi = dc_hi.min((phi - ac[i * n + j]) * n as f64);
                        }
                    }
                    if dc_lo > dc_hi {
                        return Err(Error::Model(format!(
                            "block ({br},{bc}) admits no DC within the pixel range"
                        )));
                    }
                    let dc = model.add_var(
                        Some(VarKey::Coeff { br, bc, k: 0, l: 0 }),
                        dc_lo,
                        dc_hi,
                        VarKind::Continuous,
                    );
                    for i in 0..n {
                        for j in 0..n {
                            let x = model.var(VarKey::Pixel { i: br * n + i, j: bc * n + j }).unwrap();
                            model.add_constraint(
                                vec![(x, 1.0), (dc, -basis.weight(i, j, 0, 0))],
                                Relation::Eq,
                                ac[i * n + j],
                            );
                            hints.push((model.constraints.len() - 1, x));
                            estimates.insert(
                                (br * n + i, bc * n + j),
                                ac[i * n + j] + dc_lo / n as f64,
                            );
                        }
                    }
                }
            }
            add_smoothness_objective(&mut model, &scope, &estimates, &mut hints);
            model.basis_hint = hints;
            Ok(model)
        }
        AlignmentStrategy::RegionLp => {
            let grid = regions.ok_or_else(|| {
                Error::Config("region-LP alignment requires the region partition".into())
            })?;
            if grid.count() < 2 {
                return Err(Error::Config(
                    "region-LP alignment is degenerate with a single region".into(),
                ));
            }
            let (x_min, x_max) = pixel_range(cfg);
            let eps = match (&cfg.quant, cfg.relax_pixels) {
                (Some(q), true) => Some(quant_error_bound(q, basis)),
                _ => None,
            };
            let raw = inverse_dct(stage1, basis, x_min, x_max);
            let mut model = LinearModel::default();
            let mut hints: Vec<(usize, VarId)> = Vec::new();
            let mut estimates: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            let scope = ModelScope::full_image(stage1);
            for i in 0..stage1.height() {
                for j in 0..stage1.width() {
                    let (lo, hi) = match &eps {
                        Some(e) => {
                            let widen = e[(i % n) * n + (j % n)] + 1.0;
                            (x_min - widen, x_max + widen)
                        }
                        None => (x_min, x_max),
                    };
                    model.add_var(Some(VarKey::Pixel { i, j }), lo, hi, VarKind::Continuous);
                }
            }
            for r in 0..grid.count() {
                model.add_var(
                    Some(VarKey::RegionOffset { region: r }),
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    VarKind::Continuous,
                );
            }
            // An offset common to all regions would only drift brightness;
            // pin the mean so the solution is unique up to pair costs.
            let anchor = (0..grid.count())
                .map(|r| (model.var(VarKey::RegionOffset { region: r }).unwrap(), 1.0))
                .collect();
            model.add_constraint(anchor, Relation::Eq, 0.0);
            for i in 0..stage1.height() {
                for j in 0..stage1.width() {
                    let r = grid.region_of_block(i / n, j / n, n);
                    let x = model.var(VarKey::Pixel { i, j }).unwrap();
                    let off = model.var(VarKey::RegionOffset { region: r }).unwrap();
                    // x = stage1_pixel + offset / N
                    model.add_constraint(
                        vec![(x, 1.0), (off, -1.0 / n as f64)],
                        Relation::Eq,
                        raw.sample(i, j),
                    );
                    hints.push((model.constraints.len() - 1, x));
                    estimates.insert((i, j), raw.sample(i, j));
                }
            }
            add_smoothness_objective(&mut model, &scope, &estimates, &mut hints);
            model.basis_hint = hints;
            Ok(model)
        }
    }
}
