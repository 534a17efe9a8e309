//! Deterministic hill-climbing over sign choices: starting from a candidate
//! assignment, flip single unknowns whenever that lowers the reconstruction's
//! neighbor-difference sum without leaving the widened pixel range. Used to
//! seed branch-and-bound with a strong incumbent.

use std::collections::BTreeMap;

use crate::codec::{CoeffKey, MaskedImage, ZSlot};
use crate::model::ModelScope;
use crate::transform::{quant_error_bound, DctBasis};

const MAX_PASSES: usize = 25;
/// Weight turning pixel-range violations into objective penalty, steering
/// infeasible starting points back into the box.
const RANGE_PENALTY: f64 = 1e5;

/// The candidate chosen for every open unknown, improved in place.
pub(crate) fn improve_assignment(
    masked: &MaskedImage,
    scope: &ModelScope,
    basis: &DctBasis,
    assignment: &mut BTreeMap<CoeffKey, f64>,
) {
    let searcher = Searcher::new(masked, scope, basis);
    searcher.run(assignment);
}

struct Searcher<'a> {
    masked: &'a MaskedImage,
    scope: &'a ModelScope,
    basis: &'a DctBasis,
    x_min: f64,
    x_max: f64,
    /// Widening of the pixel range per block-local position.
    widen: Vec<f64>,
}

impl<'a> Searcher<'a> {
    fn new(masked: &'a MaskedImage, scope: &'a ModelScope, basis: &'a DctBasis) -> Self {
        let n = masked.coeffs.n;
        let (x_min, x_max) = if masked.cfg.level_shift { (-128.0, 127.0) } else { (0.0, 255.0) };
        let widen = match (&masked.cfg.quant, masked.cfg.relax_pixels) {
            (Some(q), true) => {
                quant_error_bound(q, basis).iter().map(|e| e + 1.0).collect()
            }
            _ => vec![0.0; n * n],
        };
        Searcher { masked, scope, basis, x_min, x_max, widen }
    }

    /// Reconstructs the scope's pixels for the given assignment along with
    /// the total pixel-range violation.
    fn decode(&self, assignment: &BTreeMap<CoeffKey, f64>) -> Option<(Vec<f64>, f64)> {
        let co = &self.masked.coeffs;
        let n = co.n;
        let (br0, bc0) = (self.scope.top / n, self.scope.left / n);
        let (brows, bcols) = (self.scope.height / n, self.scope.width / n);
        let chained = self.masked.cfg.dc_prediction_mode != 0;

        // Per-block DC values, chain-decoded inside the scope.
        let mut dcs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        if chained {
            for br in br0..br0 + brows {
                for bc in bc0..bc0 + bcols {
                    let slot = br * co.block_cols + bc;
                    let z = match self.masked.chain.z[slot] {
                        ZSlot::Known(v) => v,
                        ZSlot::ForcedZero => 0.0,
                        ZSlot::Unknown => match self.scope.fixed_unknowns.get(&(br, bc, 0, 0)) {
                            Some(&v) => v,
                            None => *assignment.get(&(br, bc, 0, 0))?,
                        },
                    };
                    let mode = self.masked.cfg.dc_prediction_mode;
                    let fetch = |r: usize, c: usize, dcs: &BTreeMap<(usize, usize), f64>| {
                        dcs.get(&(r, c)).or_else(|| self.scope.solved_dcs.get(&(r, c))).copied()
                    };
                    let pred = match mode {
                        1 => {
                            if bc == 0 {
                                Some(0.0)
                            } else {
                                fetch(br, bc - 1, &dcs)
                            }
                        }
                        2 => {
                            if br == 0 && bc == 0 {
                                Some(0.0)
                            } else if bc == 0 {
                                fetch(br - 1, co.block_cols - 1, &dcs)
                            } else {
                                fetch(br, bc - 1, &dcs)
                            }
                        }
                        _ => match (br, bc) {
                            (0, 0) => Some(0.0),
                            (0, _) => fetch(0, bc - 1, &dcs),
                            (_, 0) => fetch(br - 1, 0, &dcs),
                            _ => match (fetch(br - 1, bc, &dcs), fetch(br, bc - 1, &dcs)) {
                                (Some(a), Some(l)) => Some((a + l) / 2.0),
                                _ => None,
                            },
                        },
                    };
                    // A dropped cross-scope link leaves the differential
                    // unexploited; anchor the chain head at its estimate.
                    let dc = match pred {
                        Some(p) => p + z,
                        None => z,
                    };
                    dcs.insert((br, bc), dc);
                }
            }
        }

        let mut pixels = vec![0.0; self.scope.height * self.scope.width];
        let mut violation = 0.0;
        for br in br0..br0 + brows {
            for bc in bc0..bc0 + bcols {
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            for l in 0..n {
                                let key = (br, bc, k, l);
                                let v = if chained && (k, l) == (0, 0) {
                                    dcs[&(br, bc)]
                                } else if self.masked.mask.forced_zero.contains(&key) {
                                    0.0
                                } else if let Some(&f) = self.scope.fixed_unknowns.get(&key) {
                                    f
                                } else if self.masked.mask.entries.contains_key(&key) {
                                    *assignment.get(&key)?
                                } else {
                                    co.get(br, bc, k, l)
                                };
                                acc += self.basis.weight(i, j, k, l) * v;
                            }
                        }
                        let widen = self.widen[i * n + j];
                        violation += (self.x_min - widen - acc).max(0.0)
                            + (acc - self.x_max - widen).max(0.0);
                        let row = br * n + i - self.scope.top;
                        let col = bc * n + j - self.scope.left;
                        pixels[row * self.scope.width + col] = acc;
                    }
                }
            }
        }
        Some((pixels, violation))
    }

    /// Smoothness objective of a scope reconstruction, including pairs into
    /// boundary constants.
    fn objective(&self, pixels: &[f64]) -> f64 {
        let (h, w) = (self.scope.height, self.scope.width);
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                let v = pixels[i * w + j];
                if j + 1 < w {
                    total += (v - pixels[i * w + j + 1]).abs();
                }
                if i + 1 < h {
                    total += (v - pixels[(i + 1) * w + j]).abs();
                }
                let (ai, aj) = (i + self.scope.top, j + self.scope.left);
                for (ni, nj) in [
                    (ai.wrapping_sub(1), aj),
                    (ai + 1, aj),
                    (ai, aj.wrapping_sub(1)),
                    (ai, aj + 1),
                ] {
                    let inside = ni >= self.scope.top
                        && ni < self.scope.top + h
                        && nj >= self.scope.left
                        && nj < self.scope.left + w;
                    if !inside {
                        if let Some(&b) = self.scope.boundary_pixels.get(&(ni, nj)) {
                            total += (v - b).abs();
                        }
                    }
                }
            }
        }
        total
    }

    fn run(&self, assignment: &mut BTreeMap<CoeffKey, f64>) {
        let keys: Vec<CoeffKey> = assignment.keys().copied().collect();
        if keys.is_empty() {
            return;
        }
        // Groups for joint flips: per block, and the whole scope. Jointly
        // negating a block's unknowns escapes the inverted-block local
        // minima that single flips cannot leave.
        let mut groups: Vec<Vec<CoeffKey>> = Vec::new();
        {
            let mut by_block: BTreeMap<(usize, usize), Vec<CoeffKey>> = BTreeMap::new();
            for &key in &keys {
                by_block.entry((key.0, key.1)).or_default().push(key);
            }
            groups.extend(by_block.into_values().filter(|g| g.len() > 1));
        }
        if keys.len() > 1 {
            groups.push(keys.clone());
        }

        let score = |this: &Self, a: &BTreeMap<CoeffKey, f64>| -> f64 {
            match this.decode(a) {
                Some((px, violation)) => this.objective(&px) + RANGE_PENALTY * violation,
                None => f64::INFINITY,
            }
        };
        let flip_of = |entry: &crate::codec::SignEntry, v: f64| {
            if v == entry.lo {
                entry.hi
            } else {
                entry.lo
            }
        };
        let mut best = score(self, assignment);
        for _ in 0..MAX_PASSES {
            let mut improved = false;
            for &key in &keys {
                let entry = &self.masked.mask.entries[&key];
                let current = assignment[&key];
                assignment.insert(key, flip_of(entry, current));
                let obj = score(self, assignment);
                if obj < best - 1e-9 {
                    best = obj;
                    improved = true;
                } else {
                    assignment.insert(key, current);
                }
            }
            for group in &groups {
                let saved: Vec<(CoeffKey, f64)> =
                    group.iter().map(|&k| (k, assignment[&k])).collect();
                for &(k, v) in &saved {
                    assignment.insert(k, flip_of(&self.masked.mask.entries[&k], v));
                }
                let obj = score(self, assignment);
                if obj < best - 1e-9 {
                    best = obj;
                    improved = true;
                } else {
                    for (k, v) in saved {
                        assignment.insert(k, v);
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
}
