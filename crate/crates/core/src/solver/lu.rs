//! Sparse LU factorization of a simplex basis with partial pivoting,
//! left-looking Gilbert-Peierls style: each column is computed by a sparse
//! triangular solve whose reach is found by depth-first search.

use crate::error::{Error, Result};

/// One sparse column: (row, value) pairs, rows strictly increasing.
pub type SparseCol = Vec<(u32, f64)>;

const PIVOT_ABS_MIN: f64 = 1e-11;

/// LU factors of a column-permuted, row-permuted basis.
///
/// Basis columns are processed in an internally chosen order `col_order`
/// (ascending nonzero count, which keeps near-triangular bases fill-free);
/// `pivot_row[k]` is the original row pivoting elimination step `k`.
pub struct LuFactors {
    m: usize,
    /// Subdiagonal of L per elimination step, original row indices.
    lcols: Vec<SparseCol>,
    /// Above-diagonal of U per step, indices are pivot positions.
    ucols: Vec<SparseCol>,
    udiag: Vec<f64>,
    pivot_row: Vec<u32>,
    /// Original row -> pivot position.
    row_pos: Vec<u32>,
    /// Basis slot processed at each elimination step.
    col_order: Vec<u32>,
    /// Factor nonzero count; exposed for refactorization heuristics.
    #[allow(dead_code)]
    pub fill: usize,
}

impl LuFactors {
    /// Factorizes the basis given as `m` sparse columns.
    pub fn factorize(m: usize, basis_cols: &[&SparseCol]) -> Result<LuFactors> {
        debug_assert_eq!(basis_cols.len(), m);
        let mut order: Vec<u32> = (0..m as u32).collect();
        order.sort_by_key(|&c| (basis_cols[c as usize].len(), c));

        let mut lcols: Vec<SparseCol> = Vec::with_capacity(m);
        let mut ucols: Vec<SparseCol> = Vec::with_capacity(m);
        let mut udiag = vec![0.0; m];
        let mut pivot_row = vec![u32::MAX; m];
        let mut row_pos = vec![u32::MAX; m];

        // Dense work vector plus DFS scratch, reused across columns.
        let mut work = vec![0.0f64; m];
        let mut visited = vec![u32::MAX; m];
        let mut topo: Vec<u32> = Vec::new();
        let mut dfs_stack: Vec<(u32, usize)> = Vec::new();

        for (step, &slot) in order.iter().enumerate() {
            let col = basis_cols[slot as usize];
            // Symbolic: rows reachable from the column pattern through
            // finished L columns, in reverse-postorder.
            topo.clear();
            for &(r, _) in col {
                if visited[r as usize] == step as u32 {
                    continue;
                }
                dfs_stack.push((r, 0));
                visited[r as usize] = step as u32;
                while let Some(&mut (node, ref mut child)) = dfs_stack.last_mut() {
                    let p = row_pos[node as usize];
                    let expanded = if p != u32::MAX {
                        let lc = &lcols[p as usize];
                        let mut advanced = false;
                        while *child < lc.len() {
                            let next = lc[*child].0;
                            *child += 1;
                            if visited[next as usize] != step as u32 {
                                visited[next as usize] = step as u32;
                                dfs_stack.push((next, 0));
                                advanced = true;
                                break;
                            }
                        }
                        advanced
                    } else {
                        false
                    };
                    if !expanded {
                        topo.push(node);
                        dfs_stack.pop();
                    }
                }
            }
            // Numeric solve in topological (reverse-postorder) order.
            for &(r, v) in col {
                work[r as usize] = v;
            }
            for &node in topo.iter().rev() {
                let p = row_pos[node as usize];
                if p == u32::MAX {
                    continue;
                }
                let z = work[node as usize];
                if z != 0.0 {
                    for &(r, v) in &lcols[p as usize] {
                        work[r as usize] -= z * v;
                    }
                }
            }
            // Pivot: largest magnitude among rows without a pivot.
            let mut piv_row = u32::MAX;
            let mut piv_abs = 0.0f64;
            for &node in topo.iter() {
                if row_pos[node as usize] == u32::MAX {
                    let a = work[node as usize].abs();
                    if a > piv_abs || (a == piv_abs && piv_row != u32::MAX && node < piv_row) {
                        piv_abs = a;
                        piv_row = node;
                    }
                }
            }
            if piv_row == u32::MAX || piv_abs < PIVOT_ABS_MIN {
                for &node in topo.iter() {
                    work[node as usize] = 0.0;
                }
                return Err(Error::Solver(format!(
                    "singular basis at elimination step {step} (pivot {piv_abs:.3e})"
                )));
            }
            let piv_val = work[piv_row as usize];
            let mut ucol: SparseCol = Vec::new();
            let mut lcol: SparseCol = Vec::new();
            for &node in topo.iter() {
                let v = work[node as usize];
                work[node as usize] = 0.0;
                if v == 0.0 {
                    continue;
                }
                let p = row_pos[node as usize];
                if p != u32::MAX {
                    ucol.push((p, v));
                } else if node != piv_row {
                    lcol.push((node, v / piv_val));
                }
            }
            ucol.sort_unstable_by_key(|&(p, _)| p);
            udiag[step] = piv_val;
            pivot_row[step] = piv_row;
            row_pos[piv_row as usize] = step as u32;
            lcols.push(lcol);
            ucols.push(ucol);
        }

        let fill = lcols.iter().map(Vec::len).sum::<usize>()
            + ucols.iter().map(Vec::len).sum::<usize>()
            + m;
        Ok(LuFactors { m, lcols, ucols, udiag, pivot_row, row_pos, col_order: order, fill })
    }

    /// Solves `B x = b` in place: `b` enters as the right-hand side indexed
    /// by row and leaves as the solution indexed by basis slot. `scratch`
    /// must have length `m`.
    pub fn ftran(&self, b: &mut [f64], scratch: &mut [f64]) {
        debug_assert_eq!(b.len(), self.m);
        debug_assert_eq!(scratch.len(), self.m);
        // L z = P b, z kept in original-row addressing.
        for k in 0..self.m {
            let z = b[self.pivot_row[k] as usize];
            if z != 0.0 {
                for &(r, v) in &self.lcols[k] {
                    b[r as usize] -= z * v;
                }
            }
        }
        // U w = z, positions descending; scatter into slot order at the end.
        for k in (0..self.m).rev() {
            let rhs = b[self.pivot_row[k] as usize];
            let x = rhs / self.udiag[k];
            scratch[k] = x;
            b[self.pivot_row[k] as usize] = 0.0;
            if x != 0.0 {
                for &(p, v) in &self.ucols[k] {
                    b[self.pivot_row[p as usize] as usize] -= x * v;
                }
            }
        }
        for k in 0..self.m {
            b[self.col_order[k] as usize] = scratch[k];
        }
    }

    /// Solves `Bᵀ y = c` in place: `c` enters indexed by basis slot and
    /// leaves as `y` indexed by row. `scratch` must have length `m`.
    pub fn btran(&self, c: &mut [f64], scratch: &mut [f64]) {
        debug_assert_eq!(c.len(), self.m);
        debug_assert_eq!(scratch.len(), self.m);
        let z = scratch;
        // Reorder the right-hand side into elimination-step space.
        for k in 0..self.m {
            z[k] = c[self.col_order[k] as usize];
        }
        // Uᵀ z' = z, forward over steps.
        for k in 0..self.m {
            let mut acc = z[k];
            for &(p, v) in &self.ucols[k] {
                acc -= v * z[p as usize];
            }
            z[k] = acc / self.udiag[k];
        }
        // Lᵀ u = z', backward over steps; u addressed by step.
        for k in (0..self.m).rev() {
            let mut acc = z[k];
            for &(r, v) in &self.lcols[k] {
                acc -= v * z[self.row_pos[r as usize] as usize];
            }
            z[k] = acc;
        }
        for k in 0..self.m {
            c[self.pivot_row[k] as usize] = z[k];
        }
    }
}
