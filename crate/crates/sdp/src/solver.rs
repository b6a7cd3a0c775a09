//! Primal-dual interior-point method on the homogeneous self-dual embedding.
//!
//! The embedding solves
//!
//! ```text
//! A(X) - b tau = 0,   A^T y + S - C tau = 0,   b^T y - <C, X> - kappa = 0
//! ```
//!
//! with `X, S` PSD and `tau, kappa >= 0`. A solution with `tau > 0` scales to
//! an optimal pair; one with `kappa > 0` yields an infeasibility certificate.
//! Directions use Nesterov-Todd scaling `X = G L G^T`, `S = G^-T L G^-1`
//! (`L` diagonal) and a Mehrotra predictor-corrector. Iterates are updated in
//! the scaled space so the scaling factors stay well conditioned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::instance::SdpInstance;
use crate::linalg::{cholesky_regularized, cholesky_solve};
use crate::presolve::{presolve, PresolveOutcome};
use crate::SdpError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Relative primal and dual residual tolerance.
    pub feasibility_tol: f64,
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    pub max_iterations: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Growth ratio of the dual objective that flags divergence when the
    /// embedding is disabled.
    pub divergence_ratio: f64,
    /// Use the homogeneous self-dual embedding (otherwise an infeasible-start
    /// method with divergence heuristics).
    pub homogeneous: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            gap_tol: 1e-8,
            max_iterations: 200,
            step_fraction: 0.98,
            divergence_ratio: 1e8,
            homogeneous: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SdpError> {
        let ok = self.feasibility_tol > 0.0
            && self.gap_tol > 0.0
            && self.step_fraction > 0.0
            && self.step_fraction < 1.0
            && self.divergence_ratio > 1.0
            && self.max_iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(SdpError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max_r |<A_r, X> + B_r x_f - b_r|`.
    pub primal: f64,
    /// Largest entry of `C - A^T y - S`, including the free-variable rows.
    pub dual: f64,
    /// `|<C, X> + c_f x_f - b^T y|`.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Complementarity measure of the embedding divided by `tau^2`.
    pub mu: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresolveSummary {
    pub eliminated_free: usize,
    pub dependent_rows: Vec<usize>,
    pub empty_rows: Vec<usize>,
    pub reduced_rows: usize,
}

/// Solver output. For infeasible statuses `y`/`s` (primal infeasible) or
/// `x`/`free` (dual infeasible) hold the certificate ray instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub x: Vec<DMatrix<f64>>,
    pub free: Vec<f64>,
    pub y: Vec<f64>,
    pub s: Vec<DMatrix<f64>>,
    /// Residuals measured on the original (unpresolved) instance.
    pub residuals: Residuals,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub history: Vec<IterationLog>,
    pub presolve: Option<PresolveSummary>,
    pub message: String,
}

/// Residuals of a candidate `(X, x_f, y, S)` against `inst`.
pub fn residuals(
    inst: &SdpInstance,
    x: &[DMatrix<f64>],
    free: &[f64],
    y: &[f64],
    s: &[DMatrix<f64>],
) -> Result<Residuals, SdpError> {
    check_shapes(inst, x)?;
    check_shapes(inst, s)?;
    if free.len() != inst.n_free || y.len() != inst.rows.len() {
        return Err(SdpError::ShapeMismatch("free or dual vector length".into()));
    }
    let primal = inst.rows.iter().map(|r| (r.lhs.eval(x, free) - r.rhs).abs()).fold(0.0, f64::max);
    let mut z = inst.zero_blocks();
    inst.objective.add_matrix_to(1.0, &mut z);
    let mut fz = vec![0.0; inst.n_free];
    for &(k, v) in &inst.objective.free {
        fz[k] += v;
    }
    for (r, row) in inst.rows.iter().enumerate() {
        row.lhs.add_matrix_to(-y[r], &mut z);
        for &(k, v) in &row.lhs.free {
            fz[k] -= v * y[r];
        }
    }
    let mut dual = fz.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (zb, sb) in z.iter().zip(s) {
        dual = dual.max((zb - sb).amax());
    }
    let pobj = inst.objective.eval(x, free);
    let dobj: f64 = inst.rows.iter().zip(y).map(|(r, yi)| r.rhs * yi).sum();
    Ok(Residuals { primal, dual, gap: (pobj - dobj).abs() })
}

fn check_shapes(inst: &SdpInstance, x: &[DMatrix<f64>]) -> Result<(), SdpError> {
    if x.len() != inst.blocks.len() || x.iter().zip(&inst.blocks).any(|(m, &n)| m.nrows() != n || m.ncols() != n) {
        return Err(SdpError::ShapeMismatch("block dimensions".into()));
    }
    Ok(())
}

/// Presolves, solves and lifts the solution back to `inst`.
pub fn solve(inst: &SdpInstance, config: &SolverConfig) -> Result<SdpSolution, SdpError> {
    inst.validate()?;
    config.validate()?;
    let (reduced, map) = match presolve(inst) {
        PresolveOutcome::Reduced { instance, map } => (instance, map),
        PresolveOutcome::Infeasible { row, mismatch } => {
            return Ok(trivial(
                inst,
                SolveStatus::PrimalInfeasible,
                format!("presolve: row {row} is inconsistent with the others (mismatch {mismatch:.3e})"),
            ))
        }
        PresolveOutcome::Unbounded { var } => {
            return Ok(trivial(
                inst,
                SolveStatus::DualInfeasible,
                format!("presolve: free variable {var} has an objective weight but appears in no row"),
            ))
        }
    };
    let core = solve_reduced(&reduced, config);
    let free = map.lift_free(&core.x);
    let y = map.lift_dual(inst, &core.y);
    let mut s = inst.zero_blocks();
    inst.objective.add_matrix_to(1.0, &mut s);
    for (r, row) in inst.rows.iter().enumerate() {
        row.lhs.add_matrix_to(-y[r], &mut s);
    }
    let (x, free, y, s) = match core.status {
        SolveStatus::PrimalInfeasible => {
            // The lifted ray: -A^T y is PSD; keep the reduced certificate's S.
            let free0 = vec![0.0; inst.n_free];
            (inst.zero_blocks(), free0, y, core.s.clone())
        }
        _ => (core.x.clone(), free, y, if core.status == SolveStatus::Optimal { s } else { core.s.clone() }),
    };
    let res = residuals(inst, &x, &free, &y, &s)?;
    let primal_objective = inst.objective.eval(&x, &free);
    let dual_objective: f64 = inst.rows.iter().zip(&y).map(|(r, yi)| r.rhs * yi).sum();
    Ok(SdpSolution {
        status: core.status,
        x,
        free,
        y,
        s,
        residuals: res,
        primal_objective,
        dual_objective,
        iterations: core.iterations,
        history: core.history,
        presolve: Some(PresolveSummary {
            eliminated_free: map.eliminations.len(),
            dependent_rows: map.dependent_rows.clone(),
            empty_rows: map.empty_rows.clone(),
            reduced_rows: reduced.rows.len(),
        }),
        message: core.message,
    })
}

fn trivial(inst: &SdpInstance, status: SolveStatus, message: String) -> SdpSolution {
    SdpSolution {
        status,
        x: inst.zero_blocks(),
        free: vec![0.0; inst.n_free],
        y: vec![0.0; inst.rows.len()],
        s: inst.zero_blocks(),
        residuals: Residuals::default(),
        primal_objective: 0.0,
        dual_objective: 0.0,
        iterations: 0,
        history: Vec::new(),
        presolve: None,
        message,
    }
}

struct CoreResult {
    status: SolveStatus,
    x: Vec<DMatrix<f64>>,
    y: Vec<f64>,
    s: Vec<DMatrix<f64>>,
    iterations: usize,
    history: Vec<IterationLog>,
    message: String,
}

/// Sparse coefficients of one row restricted to one block.
struct BlockRow {
    row: usize,
    entries: Vec<(usize, usize, f64)>,
}

struct Problem<'a> {
    inst: &'a SdpInstance,
    /// Rows touching each block.
    by_block: Vec<Vec<BlockRow>>,
    c: Vec<DMatrix<f64>>,
    b: DVector<f64>,
}

impl Problem<'_> {
    fn new(inst: &SdpInstance) -> Problem<'_> {
        let mut by_block: Vec<Vec<BlockRow>> = (0..inst.blocks.len()).map(|_| Vec::new()).collect();
        for (r, row) in inst.rows.iter().enumerate() {
            for e in &row.lhs.entries {
                let list = &mut by_block[e.block];
                if list.last().map(|br| br.row) != Some(r) {
                    list.push(BlockRow { row: r, entries: Vec::new() });
                }
                list.last_mut().expect("just pushed").entries.push((e.i, e.j, e.value));
            }
        }
        let mut c = inst.zero_blocks();
        inst.objective.add_matrix_to(1.0, &mut c);
        let b = DVector::from_iterator(inst.rows.len(), inst.rows.iter().map(|r| r.rhs));
        Problem { inst, by_block, c, b }
    }

    fn m(&self) -> usize {
        self.inst.rows.len()
    }

    fn a_op(&self, x: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.m());
        for (blk, rows) in self.by_block.iter().enumerate() {
            let xb = &x[blk];
            for br in rows {
                let mut s = 0.0;
                for &(i, j, v) in &br.entries {
                    s += v * xb[(i, j)];
                }
                out[br.row] += s;
            }
        }
        out
    }

    fn a_adj(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out = self.inst.zero_blocks();
        for (blk, rows) in self.by_block.iter().enumerate() {
            let ob = &mut out[blk];
            for br in rows {
                let yr = y[br.row];
                for &(i, j, v) in &br.entries {
                    if i == j {
                        ob[(i, i)] += yr * v;
                    } else {
                        ob[(i, j)] += 0.5 * yr * v;
                        ob[(j, i)] += 0.5 * yr * v;
                    }
                }
            }
        }
        out
    }

    /// Schur complement `M_ij = <A_i, W A_j W>` as a dense row-major matrix.
    fn schur(&self, w: &[DMatrix<f64>]) -> Vec<f64> {
        let m = self.m();
        let mut mat = vec![0.0; m * m];
        for (blk, rows) in self.by_block.iter().enumerate() {
            let wb = &w[blk];
            let n = wb.nrows();
            let mut t = DMatrix::<f64>::zeros(n, n);
            let mut p = DMatrix::<f64>::zeros(n, n);
            let mut touched: Vec<usize> = Vec::new();
            let mut mark = vec![false; n];
            for (a, ra) in rows.iter().enumerate() {
                // P = A_i W (only touched rows nonzero), T = W P.
                for &r in &touched {
                    p.row_mut(r).fill(0.0);
                    mark[r] = false;
                }
                touched.clear();
                for &(i, j, v) in &ra.entries {
                    let (pairs, h): (&[(usize, usize)], f64) =
                        if i == j { (&[(i, i)], v) } else { (&[(i, j), (j, i)], 0.5 * v) };
                    for &(r, c) in pairs {
                        if !mark[r] {
                            mark[r] = true;
                            touched.push(r);
                        }
                        for k in 0..n {
                            p[(r, k)] += h * wb[(c, k)];
                        }
                    }
                }
                t.fill(0.0);
                for &r in &touched {
                    for k in 0..n {
                        let prk = p[(r, k)];
                        if prk != 0.0 {
                            let col = wb.column(r);
                            let mut tc = t.column_mut(k);
                            tc.axpy(prk, &col, 1.0);
                        }
                    }
                }
                for rb in &rows[a..] {
                    let mut s = 0.0;
                    for &(i, j, v) in &rb.entries {
                        s += v * t[(i, j)];
                    }
                    mat[ra.row * m + rb.row] += s;
                    if rb.row != ra.row {
                        mat[rb.row * m + ra.row] += s;
                    }
                }
            }
        }
        mat
    }
}

fn inner(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn fro(a: &[DMatrix<f64>]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// NT scaling state of one block: `X = G L G^T`, `S = G^-T L G^-1`.
#[derive(Clone)]
struct Scaling {
    g: DMatrix<f64>,
    ginv: DMatrix<f64>,
    lam: DVector<f64>,
}

impl Scaling {
    fn identity(n: usize) -> Self {
        Self { g: DMatrix::identity(n, n), ginv: DMatrix::identity(n, n), lam: DVector::from_element(n, 1.0) }
    }

    fn x(&self) -> DMatrix<f64> {
        let gl = &self.g * DMatrix::from_diagonal(&self.lam);
        let mut x = gl * self.g.transpose();
        symmetrize(&mut x);
        x
    }

    fn s(&self) -> DMatrix<f64> {
        let gt = self.ginv.transpose();
        let gl = &gt * DMatrix::from_diagonal(&self.lam);
        let mut s = gl * &self.ginv;
        symmetrize(&mut s);
        s
    }

    fn w(&self) -> DMatrix<f64> {
        let mut w = &self.g * self.g.transpose();
        symmetrize(&mut w);
        w
    }

    /// Moves to `x~ = L + a dX~`, `s~ = L + a dS~` in the current scaled
    /// coordinates and recomputes the NT factors.
    fn update(&mut self, dx: &DMatrix<f64>, ds: &DMatrix<f64>, a: f64) -> bool {
        let base = DMatrix::from_diagonal(&self.lam);
        let mut xt = &base + dx * a;
        let mut st = &base + ds * a;
        symmetrize(&mut xt);
        symmetrize(&mut st);
        let (Some(l1), Some(l2)) = (xt.cholesky(), st.cholesky()) else { return false };
        let l1 = l1.l();
        let l2 = l2.l();
        let svd = (l2.transpose() * &l1).svd(true, true);
        let (Some(u), Some(vt)) = (svd.u, svd.v_t) else { return false };
        let sv = svd.singular_values;
        if sv.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return false;
        }
        let isq = DMatrix::from_diagonal(&sv.map(|v| 1.0 / v.sqrt()));
        let g = &self.g * l1 * vt.transpose() * &isq;
        let ginv = &isq * u.transpose() * l2.transpose() * &self.ginv;
        self.g = g;
        self.ginv = ginv;
        self.lam = sv;
        true
    }
}

/// Largest `a` with `L + a D` PSD, where `L` is the diagonal `lam`.
fn max_step(lam: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lam.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = d[(i, j)] / (lam[i] * lam[j]).sqrt();
        }
    }
    symmetrize(&mut m);
    let e = m.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if e < 0.0 {
        -1.0 / e
    } else {
        f64::INFINITY
    }
}

struct Direction {
    dx: Vec<DMatrix<f64>>,
    ds: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    dtau: f64,
    dkappa: f64,
}

fn solve_reduced(inst: &SdpInstance, cfg: &SolverConfig) -> CoreResult {
    let prob = Problem::new(inst);
    let m = prob.m();
    let nb = inst.blocks.len();
    let order = inst.cone_order() as f64;
    let hsd = cfg.homogeneous;
    let mut sc: Vec<Scaling> = inst.blocks.iter().map(|&n| Scaling::identity(n)).collect();
    let mut y = DVector::<f64>::zeros(m);
    let mut tau = 1.0f64;
    let mut kappa = if hsd { 1.0f64 } else { 0.0 };
    let bnorm = prob.b.norm();
    let cnorm = fro(&prob.c);
    let mut history = Vec::new();
    let mut dobj0: Option<f64> = None;

    let finish = |status: SolveStatus,
                  sc: &[Scaling],
                  y: &DVector<f64>,
                  tau: f64,
                  it: usize,
                  hist: Vec<IterationLog>,
                  msg: String| {
        let scale = if status == SolveStatus::Optimal
            || status == SolveStatus::IterLimit
            || status == SolveStatus::NumericalFailure
        {
            1.0 / tau
        } else {
            1.0
        };
        let mut x: Vec<DMatrix<f64>> = sc.iter().map(|s| s.x() * scale).collect();
        let mut yv: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let mut s: Vec<DMatrix<f64>> = sc.iter().map(|s| s.s() * scale).collect();
        match status {
            SolveStatus::PrimalInfeasible => {
                let by: f64 = prob.b.iter().zip(&yv).map(|(b, v)| b * v).sum();
                for v in &mut yv {
                    *v /= by;
                }
                for sb in &mut s {
                    *sb /= by;
                }
                for xb in &mut x {
                    xb.fill(0.0);
                }
            }
            SolveStatus::DualInfeasible => {
                let cx = -inner(&prob.c, &x);
                for xb in &mut x {
                    *xb /= cx;
                }
                yv.iter_mut().for_each(|v| *v = 0.0);
            }
            _ => {}
        }
        CoreResult { status, x, y: yv, s, iterations: it, history: hist, message: msg }
    };

    for it in 0..=cfg.max_iterations {
        let x: Vec<DMatrix<f64>> = sc.iter().map(Scaling::x).collect();
        let s: Vec<DMatrix<f64>> = sc.iter().map(Scaling::s).collect();
        let ax = prob.a_op(&x);
        let aty = prob.a_adj(&y);
        let fp = &ax - &prob.b * tau;
        let fd: Vec<DMatrix<f64>> = (0..nb).map(|k| &aty[k] + &s[k] - &prob.c[k] * tau).collect();
        let cx = inner(&prob.c, &x);
        let by = prob.b.dot(&y);
        let fg = by - cx - kappa;
        let xs: f64 = sc.iter().map(|s| s.lam.norm_squared()).sum();
        let mu = if hsd { (xs + tau * kappa) / (order + 1.0) } else { xs / order.max(1.0) };

        let pres = fp.norm() / tau / (1.0 + bnorm);
        let dres = fro(&fd) / tau / (1.0 + cnorm);
        let pobj = cx / tau;
        let dobj = by / tau;
        let rgap = (pobj - dobj).abs() / (1.0 + dobj.abs().min(pobj.abs()));
        history.push(IterationLog {
            iteration: it,
            primal_objective: pobj,
            dual_objective: dobj,
            mu: mu / (tau * tau),
            primal_residual: pres,
            dual_residual: dres,
            tau,
            kappa,
            step: 0.0,
        });
        if pres <= cfg.feasibility_tol && dres <= cfg.feasibility_tol && rgap <= cfg.gap_tol {
            return finish(SolveStatus::Optimal, &sc, &y, tau, it, history, String::new());
        }
        // Infeasibility certificates (scale invariant ratios).
        if by > 0.0 {
            let ray: Vec<DMatrix<f64>> = (0..nb).map(|k| &aty[k] + &s[k]).collect();
            if fro(&ray) / by <= cfg.feasibility_tol * (1.0 + cnorm) && (!hsd || tau < kappa) {
                return finish(SolveStatus::PrimalInfeasible, &sc, &y, tau, it, history, String::new());
            }
        }
        if cx < 0.0 && ax.norm() / (-cx) <= cfg.feasibility_tol * (1.0 + bnorm) && (!hsd || tau < kappa) {
            return finish(SolveStatus::DualInfeasible, &sc, &y, tau, it, history, String::new());
        }
        if !hsd {
            let base = *dobj0.get_or_insert(1.0 + dobj.abs());
            if dobj > cfg.divergence_ratio * base {
                return finish(
                    SolveStatus::PrimalInfeasible,
                    &sc,
                    &y,
                    1.0,
                    it,
                    history,
                    "dual objective diverged".into(),
                );
            }
            if -pobj > cfg.divergence_ratio * base {
                return finish(
                    SolveStatus::DualInfeasible,
                    &sc,
                    &y,
                    1.0,
                    it,
                    history,
                    "primal objective diverged".into(),
                );
            }
        }
        if it == cfg.max_iterations {
            break;
        }
        if !mu.is_finite() || !tau.is_finite() {
            return finish(SolveStatus::NumericalFailure, &sc, &y, tau, it, history, "non-finite iterate".into());
        }

        // Scaling matrices and Schur complement.
        let w: Vec<DMatrix<f64>> = sc.iter().map(Scaling::w).collect();
        let mmat = prob.schur(&w);
        let Some((lfac, _shift)) = cholesky_regularized(&mmat, m, 6) else {
            return finish(
                SolveStatus::NumericalFailure,
                &sc,
                &y,
                tau,
                it,
                history,
                "Schur complement factorization failed".into(),
            );
        };
        let msolve = |v: &DVector<f64>| -> DVector<f64> {
            let mut out = v.as_slice().to_vec();
            cholesky_solve(&lfac, m, &mut out);
            DVector::from_vec(out)
        };
        let wcw: Vec<DMatrix<f64>> = (0..nb).map(|k| &w[k] * &prob.c[k] * &w[k]).collect();
        let g = prob.a_op(&wcw);
        let p = msolve(&(&g + &prob.b));
        let cwc = inner(&prob.c, &wcw);
        let bmg = &prob.b - &g;
        let wfdw: Vec<DMatrix<f64>> = (0..nb).map(|k| &w[k] * &fd[k] * &w[k]).collect();
        let a_wfdw = prob.a_op(&wfdw);
        let wcw_fd = inner(&wcw, &fd);

        let direction = |eta: f64, rc: &[DMatrix<f64>], rtk: f64| -> Direction {
            let h1 = -(&fp * eta) - prob.a_op(rc) - &a_wfdw * eta;
            let q = msolve(&h1);
            let (dtau, dkappa) = if hsd {
                let h2 = -eta * fg + inner(&prob.c, rc) + eta * wcw_fd + rtk / tau;
                let den = bmg.dot(&p) + cwc + kappa / tau;
                let dtau = (h2 - bmg.dot(&q)) / den;
                (dtau, (rtk - kappa * dtau) / tau)
            } else {
                (0.0, 0.0)
            };
            let dy = &q + &p * dtau;
            let atdy = prob.a_adj(&dy);
            let ds: Vec<DMatrix<f64>> = (0..nb).map(|k| -(&fd[k] * eta) - &atdy[k] + &prob.c[k] * dtau).collect();
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    let mut d = &rc[k] - &w[k] * &ds[k] * &w[k];
                    symmetrize(&mut d);
                    d
                })
                .collect();
            Direction { dx, ds, dy, dtau, dkappa }
        };
        let scaled = |d: &Direction| -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
            let xs = (0..nb).map(|k| &sc[k].ginv * &d.dx[k] * sc[k].ginv.transpose()).collect();
            let ss = (0..nb).map(|k| sc[k].g.transpose() * &d.ds[k] * &sc[k].g).collect();
            (xs, ss)
        };
        let step_to_boundary = |d: &Direction, xs: &[DMatrix<f64>], ss: &[DMatrix<f64>]| -> f64 {
            let mut a = f64::INFINITY;
            for k in 0..nb {
                a = a.min(max_step(&sc[k].lam, &xs[k])).min(max_step(&sc[k].lam, &ss[k]));
            }
            if hsd {
                if d.dtau < 0.0 {
                    a = a.min(-tau / d.dtau);
                }
                if d.dkappa < 0.0 {
                    a = a.min(-kappa / d.dkappa);
                }
            }
            a
        };

        // Predictor.
        let rc_aff: Vec<DMatrix<f64>> = x.iter().map(|xb| -xb).collect();
        let aff = direction(1.0, &rc_aff, -tau * kappa);
        let (xa, sa) = scaled(&aff);
        let alpha_aff = step_to_boundary(&aff, &xa, &sa).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3).clamp(0.0, 1.0);

        // Corrector: L o (dX~ + dS~) = sigma mu I - L^2 - dX~_aff o dS~_aff.
        let target = sigma * mu;
        let rc: Vec<DMatrix<f64>> = (0..nb)
            .map(|k| {
                let lam = &sc[k].lam;
                let n = lam.len();
                let prod = &xa[k] * &sa[k];
                let mut u = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let mut r = -0.5 * (prod[(i, j)] + prod[(j, i)]);
                        if i == j {
                            r += target - lam[i] * lam[i];
                        }
                        u[(i, j)] = 2.0 * r / (lam[i] + lam[j]);
                    }
                }
                let mut out = &sc[k].g * u * sc[k].g.transpose();
                symmetrize(&mut out);
                out
            })
            .collect();
        let rtk = target - tau * kappa - aff.dtau * aff.dkappa;
        let eta = 1.0 - sigma;
        let dir = direction(eta, &rc, rtk);
        let (xs_, ss_) = scaled(&dir);
        let amax = step_to_boundary(&dir, &xs_, &ss_);
        let alpha = (cfg.step_fraction * amax).min(1.0);
        if !(alpha > 1e-12) {
            return finish(SolveStatus::NumericalFailure, &sc, &y, tau, it, history, "step length collapsed".into());
        }
        let backup = sc.clone();
        let mut ok = true;
        for k in 0..nb {
            if !sc[k].update(&xs_[k], &ss_[k], alpha) {
                ok = false;
                break;
            }
        }
        if !ok {
            sc = backup;
            return finish(
                SolveStatus::NumericalFailure,
                &sc,
                &y,
                tau,
                it,
                history,
                "scaling update lost definiteness".into(),
            );
        }
        y += &dir.dy * alpha;
        if hsd {
            tau += alpha * dir.dtau;
            kappa += alpha * dir.dkappa;
        }
        if let Some(last) = history.last_mut() {
            last.step = alpha;
        }
    }
    let it = cfg.max_iterations;
    finish(SolveStatus::IterLimit, &sc, &y, tau, it, history, "iteration limit reached".into())
}
