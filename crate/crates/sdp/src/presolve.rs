//! Presolve: eliminates free variables, drops empty and dependent rows, and
//! normalizes the surviving rows.
//!
//! Free variables are removed by sparse Gaussian elimination (threshold
//! partial pivoting, fewest-nonzeros row choice). Linear dependence among the
//! remaining rows is detected by a pivoted Cholesky factorization of the row
//! Gram matrix; a dependent row whose right-hand side disagrees with the
//! combination of independent rows proves primal infeasibility.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::instance::{Entry, Functional, Row, SdpInstance};
use crate::linalg::{dot, lu_solve};

/// Threshold partial pivoting ratio for free-variable elimination.
const PIVOT_RATIO: f64 = 0.1;
/// Smallest residual diagonal (on unit-norm rows) accepted as independent.
pub const DEPENDENCE_THRESHOLD: f64 = 1e-12;

type Key = (usize, usize, usize);

#[derive(Debug, Clone, Default)]
struct SparseRow {
    free: BTreeMap<usize, f64>,
    ent: BTreeMap<Key, f64>,
    rhs: f64,
}

impl SparseRow {
    fn from_functional(f: &Functional, rhs: f64) -> Self {
        let mut r = SparseRow { rhs, ..Default::default() };
        for &(k, v) in &f.free {
            *r.free.entry(k).or_insert(0.0) += v;
        }
        for e in &f.entries {
            *r.ent.entry((e.block, e.i, e.j)).or_insert(0.0) += e.value;
        }
        r.free.retain(|_, v| *v != 0.0);
        r.ent.retain(|_, v| *v != 0.0);
        r
    }

    fn nnz(&self) -> usize {
        self.free.len() + self.ent.len()
    }

    fn to_functional(&self) -> Functional {
        Functional {
            free: self.free.iter().map(|(&k, &v)| (k, v)).collect(),
            entries: self.ent.iter().map(|(&(block, i, j), &value)| Entry { block, i, j, value }).collect(),
        }
    }

    /// `self -= f * other`, returning free variables whose coefficient appeared or vanished.
    fn axpy(&mut self, f: f64, other: &SparseRow) -> (Vec<usize>, Vec<usize>) {
        let (mut added, mut removed) = (Vec::new(), Vec::new());
        for (&k, &v) in &other.free {
            let delta = f * v;
            match self.free.get_mut(&k) {
                Some(c) => {
                    let new = *c - delta;
                    if new.abs() <= 1e-13 * (c.abs() + delta.abs()) {
                        self.free.remove(&k);
                        removed.push(k);
                    } else {
                        *c = new;
                    }
                }
                None => {
                    self.free.insert(k, -delta);
                    added.push(k);
                }
            }
        }
        for (&key, &v) in &other.ent {
            let delta = f * v;
            match self.ent.get_mut(&key) {
                Some(c) => {
                    let new = *c - delta;
                    if new.abs() <= 1e-13 * (c.abs() + delta.abs()) {
                        self.ent.remove(&key);
                    } else {
                        *c = new;
                    }
                }
                None => {
                    self.ent.insert(key, -delta);
                }
            }
        }
        self.rhs -= f * other.rhs;
        (added, removed)
    }
}

/// One eliminated free variable: `x_var = (rhs - rest(x)) / pivot`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Elimination {
    pub var: usize,
    /// Original index of the pivot row.
    pub row: usize,
    pub pivot: f64,
    /// Pivot row at elimination time, without the pivot term.
    pub rest: Functional,
    pub rhs: f64,
}

/// Everything needed to lift a reduced solution back to the original instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresolveMap {
    pub n_rows_original: usize,
    pub n_free_original: usize,
    pub eliminations: Vec<Elimination>,
    /// Original row index of each reduced row.
    pub kept_rows: Vec<usize>,
    /// Reduced row `k` equals `row_scale[k]` times the (modified) original row.
    pub row_scale: Vec<f64>,
    /// Rows dropped as linearly dependent on kept rows.
    pub dependent_rows: Vec<usize>,
    /// Rows that became identically zero with zero right-hand side.
    pub empty_rows: Vec<usize>,
    /// Constant added to the reduced objective to recover the original one.
    pub objective_offset: f64,
}

#[derive(Debug, Clone)]
pub enum PresolveOutcome {
    Reduced {
        instance: SdpInstance,
        map: PresolveMap,
    },
    /// A row combination reads `0 = nonzero`.
    Infeasible {
        row: usize,
        mismatch: f64,
    },
    /// A free variable appears in the objective but in no row.
    Unbounded {
        var: usize,
    },
}

pub fn presolve(inst: &SdpInstance) -> PresolveOutcome {
    let m = inst.rows.len();
    let mut rows: Vec<SparseRow> = inst.rows.iter().map(|r| SparseRow::from_functional(&r.lhs, r.rhs)).collect();
    let mut obj = SparseRow::from_functional(&inst.objective, 0.0);
    let mut alive = vec![true; m];
    let mut col: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); inst.n_free];
    for (r, row) in rows.iter().enumerate() {
        for &k in row.free.keys() {
            col[k].insert(r);
        }
    }
    let mut eliminated = vec![false; inst.n_free];
    let mut eliminations = Vec::new();
    let mut objective_offset = 0.0;

    loop {
        let Some(k) =
            (0..inst.n_free).filter(|&k| !eliminated[k] && !col[k].is_empty()).min_by_key(|&k| (col[k].len(), k))
        else {
            break;
        };
        let max = col[k].iter().map(|&r| rows[r].free[&k].abs()).fold(0.0, f64::max);
        let p = *col[k]
            .iter()
            .filter(|&&r| rows[r].free[&k].abs() >= PIVOT_RATIO * max)
            .min_by_key(|&&r| (rows[r].nnz(), r))
            .expect("column is nonempty");
        let pivot_row = std::mem::take(&mut rows[p]);
        let pivot = pivot_row.free[&k];
        alive[p] = false;
        for &j in pivot_row.free.keys() {
            col[j].remove(&p);
        }
        let targets: Vec<usize> = col[k].iter().copied().collect();
        for r in targets {
            let f = rows[r].free[&k] / pivot;
            let (added, removed) = rows[r].axpy(f, &pivot_row);
            rows[r].free.remove(&k);
            for j in added {
                col[j].insert(r);
            }
            for j in removed {
                col[j].remove(&r);
            }
        }
        col[k].clear();
        if let Some(&c) = obj.free.get(&k) {
            let f = c / pivot;
            obj.axpy(f, &pivot_row);
            obj.free.remove(&k);
            objective_offset += f * pivot_row.rhs;
        }
        eliminated[k] = true;
        let mut rest = pivot_row.clone();
        rest.free.remove(&k);
        eliminations.push(Elimination { var: k, row: p, pivot, rest: rest.to_functional(), rhs: pivot_row.rhs });
    }
    if let Some((&var, _)) = obj.free.iter().next() {
        return PresolveOutcome::Unbounded { var };
    }

    // Empty rows and normalization.
    let rhs_scale = 1.0 + inst.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    let mut cand = Vec::new();
    let mut empty_rows = Vec::new();
    for r in 0..m {
        if !alive[r] {
            continue;
        }
        if rows[r].ent.is_empty() {
            if rows[r].rhs.abs() > 1e-9 * rhs_scale {
                return PresolveOutcome::Infeasible { row: r, mismatch: rows[r].rhs };
            }
            empty_rows.push(r);
            continue;
        }
        let norm = row_norm(&rows[r]);
        let s = 1.0 / norm;
        for v in rows[r].ent.values_mut() {
            *v *= s;
        }
        rows[r].rhs *= s;
        cand.push((r, s));
    }

    // Dependent rows via pivoted Cholesky of the Gram matrix.
    let n = cand.len();
    let mut index: BTreeMap<Key, Vec<(usize, f64)>> = BTreeMap::new();
    for (c, &(r, _)) in cand.iter().enumerate() {
        for (&key, &v) in &rows[r].ent {
            index.entry(key).or_default().push((c, v));
        }
    }
    let mut gram = vec![0.0; n * n];
    for (&(_, i, j), list) in &index {
        let w = if i == j { 1.0 } else { 0.5 };
        for &(a, va) in list {
            for &(b, vb) in list {
                gram[a * n + b] += w * va * vb;
            }
        }
    }
    let (order, rank, lrows) = pivoted_cholesky(&gram, n, DEPENDENCE_THRESHOLD);
    let mut dependent_rows = Vec::new();
    if rank < n {
        // z = L_P^{-1} b_P, then a dependent row predicts b_r = L_r . z.
        let mut z = vec![0.0; rank];
        for t in 0..rank {
            let c = order[t];
            let l = &lrows[c];
            z[t] = (rows[cand[c].0].rhs - dot(&l[..t], &z[..t])) / l[t];
        }
        let bmax = 1.0 + cand.iter().map(|&(r, _)| rows[r].rhs.abs()).fold(0.0, f64::max);
        for &c in &order[rank..] {
            let predicted = dot(&lrows[c][..rank], &z);
            let mismatch = rows[cand[c].0].rhs - predicted;
            if mismatch.abs() > 1e-7 * bmax {
                return PresolveOutcome::Infeasible { row: cand[c].0, mismatch };
            }
            dependent_rows.push(cand[c].0);
        }
        dependent_rows.sort_unstable();
    }
    let dep: BTreeSet<usize> = dependent_rows.iter().copied().collect();

    let mut reduced = SdpInstance::new(inst.blocks.clone(), 0);
    reduced.objective = obj.to_functional();
    let mut kept_rows = Vec::new();
    let mut row_scale = Vec::new();
    for &(r, s) in &cand {
        if dep.contains(&r) {
            continue;
        }
        reduced.rows.push(Row { lhs: rows[r].to_functional(), rhs: rows[r].rhs });
        kept_rows.push(r);
        row_scale.push(s);
    }
    PresolveOutcome::Reduced {
        instance: reduced,
        map: PresolveMap {
            n_rows_original: m,
            n_free_original: inst.n_free,
            eliminations,
            kept_rows,
            row_scale,
            dependent_rows,
            empty_rows,
            objective_offset,
        },
    }
}

fn row_norm(r: &SparseRow) -> f64 {
    r.ent.iter().map(|(&(_, i, j), &v)| if i == j { v * v } else { 0.5 * v * v }).sum::<f64>().sqrt()
}

/// Pivoted Cholesky of a PSD matrix. Returns the pivot order, the numerical
/// rank, and for each original index its row of `L` (in pivot-step order).
fn pivoted_cholesky(a: &[f64], n: usize, tol: f64) -> (Vec<usize>, usize, Vec<Vec<f64>>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut l: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut rank = 0;
    for t in 0..n {
        let mut best = t;
        for s in t + 1..n {
            if d[order[s]] > d[order[best]] {
                best = s;
            }
        }
        let dmax = d[order[best]];
        if dmax < tol {
            break;
        }
        order.swap(t, best);
        let p = order[t];
        let lpp = dmax.sqrt();
        l[p].push(lpp);
        for &c in &order[t + 1..] {
            let v = (a[c * n + p] - dot(&l[c][..t], &l[p][..t])) / lpp;
            l[c].push(v);
            d[c] -= v * v;
        }
        rank += 1;
    }
    (order, rank, l)
}

impl PresolveMap {
    /// Values of the eliminated free variables given the primal blocks.
    pub fn lift_free(&self, x: &[DMatrix<f64>]) -> Vec<f64> {
        let mut free = vec![0.0; self.n_free_original];
        for e in self.eliminations.iter().rev() {
            free[e.var] = (e.rhs - e.rest.eval(x, &free)) / e.pivot;
        }
        free
    }

    /// Dual multipliers for every original row given the reduced ones.
    pub fn lift_dual(&self, original: &SdpInstance, y_reduced: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows_original];
        for (k, &r) in self.kept_rows.iter().enumerate() {
            y[r] = self.row_scale[k] * y_reduced[k];
        }
        let ne = self.eliminations.len();
        if ne == 0 {
            return y;
        }
        // Pivot-row multipliers solve the free-variable dual equations B^T y = c_f.
        let var_pos: BTreeMap<usize, usize> = self.eliminations.iter().enumerate().map(|(i, e)| (e.var, i)).collect();
        let row_pos: BTreeMap<usize, usize> = self.eliminations.iter().enumerate().map(|(i, e)| (e.row, i)).collect();
        let mut mat = vec![0.0; ne * ne];
        let mut rhs = vec![0.0; ne];
        for &(k, c) in &original.objective.free {
            if let Some(&i) = var_pos.get(&k) {
                rhs[i] += c;
            }
        }
        for (r, row) in original.rows.iter().enumerate() {
            for &(k, b) in &row.lhs.free {
                let Some(&i) = var_pos.get(&k) else { continue };
                match row_pos.get(&r) {
                    Some(&j) => mat[i * ne + j] += b,
                    None => rhs[i] -= b * y[r],
                }
            }
        }
        if let Some(sol) = lu_solve(&mat, ne, &rhs) {
            for (e, v) in self.eliminations.iter().zip(sol) {
                y[e.row] = v;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ent(block: usize, i: usize, j: usize, value: f64) -> Entry {
        Entry { block, i, j, value }
    }

    fn row(entries: Vec<Entry>, free: Vec<(usize, f64)>, rhs: f64) -> Row {
        Row { lhs: Functional { free, entries }, rhs }
    }

    #[test]
    fn duplicated_row_is_removed() {
        let mut inst = SdpInstance::new(vec![2], 0);
        inst.rows.push(row(vec![ent(0, 0, 0, 1.0), ent(0, 1, 1, 1.0)], vec![], 1.0));
        inst.rows.push(row(vec![ent(0, 0, 1, 1.0)], vec![], 0.2));
        inst.rows.push(row(vec![ent(0, 0, 0, 2.0), ent(0, 1, 1, 2.0)], vec![], 2.0));
        match presolve(&inst) {
            PresolveOutcome::Reduced { instance, map } => {
                assert_eq!(instance.rows.len(), 2);
                assert_eq!(map.dependent_rows.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negated_row_with_same_rhs_is_infeasible() {
        let mut inst = SdpInstance::new(vec![2], 0);
        inst.rows.push(row(vec![ent(0, 0, 0, 1.0), ent(0, 0, 1, 3.0)], vec![], 1.0));
        inst.rows.push(row(vec![ent(0, 0, 0, -1.0), ent(0, 0, 1, -3.0)], vec![], 1.0));
        assert!(matches!(presolve(&inst), PresolveOutcome::Infeasible { .. }));
    }

    #[test]
    fn free_variables_are_eliminated_and_lifted() {
        // x0 + X00 = 2 ; x0 - x1 + X11 = 0 ; x1 + X01 = 1
        let mut inst = SdpInstance::new(vec![2], 2);
        inst.rows.push(row(vec![ent(0, 0, 0, 1.0)], vec![(0, 1.0)], 2.0));
        inst.rows.push(row(vec![ent(0, 1, 1, 1.0)], vec![(0, 1.0), (1, -1.0)], 0.0));
        inst.rows.push(row(vec![ent(0, 0, 1, 1.0)], vec![(1, 1.0)], 1.0));
        let PresolveOutcome::Reduced { instance, map } = presolve(&inst) else { panic!() };
        assert_eq!(instance.n_free, 0);
        assert_eq!(instance.rows.len(), 1);
        assert_eq!(map.eliminations.len(), 2);
        let x = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.25, 0.75])];
        let free = map.lift_free(&x);
        assert!((free[0] - 1.5).abs() < 1e-14);
        assert!((free[1] - 0.75).abs() < 1e-14);
        // The reduced row is then X00 + X11 + X01 = 2 - 1 + ... ; check the lifted point is consistent
        // only when it satisfies the reduced row.
        let val = instance.rows[0].lhs.eval(&x, &[]);
        let orig_ok = inst.rows.iter().all(|r| (r.lhs.eval(&x, &free) - r.rhs).abs() < 1e-12);
        assert_eq!((val - instance.rows[0].rhs).abs() < 1e-12, orig_ok);
    }

    #[test]
    fn empty_row_with_nonzero_rhs_is_infeasible() {
        let mut inst = SdpInstance::new(vec![1], 1);
        inst.rows.push(row(vec![], vec![(0, 1.0)], 1.0));
        inst.rows.push(row(vec![], vec![(0, 2.0)], 1.0));
        assert!(matches!(presolve(&inst), PresolveOutcome::Infeasible { .. }));
    }
}
