//! Numerical executions of cyclic hybrid systems: adaptive Dormand–Prince
//! integration, guard-crossing localization, resets, and an empirical
//! classification of the resulting transition-time sequence.
//!
//! Classifications are heuristics over finite executions and never a proof
//! of Zeno behavior; reports label them as empirical.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certifier::ZenoCertificate;
use crate::hybrid::{HybridError, HybridSystem, Mode};
use crate::io::system_fingerprint;
use crate::polynomial::{PolyError, Polynomial};

pub const DEFAULT_MAX_TRANSITIONS: usize = 200;
pub const DEFAULT_MIN_DWELL: f64 = 1e-10;
pub const DEFAULT_RTOL: f64 = 1e-9;
pub const DEFAULT_ATOL: f64 = 1e-12;
pub const DEFAULT_HORIZON: f64 = 1e4;

/// Number of trailing dwell times used for the ratio fit.
pub const FIT_WINDOW: usize = 30;
/// Fewer transitions than this give an inconclusive classification.
pub const MIN_TRANSITIONS: usize = 10;
pub const ZENO_RATIO: f64 = 0.97;
pub const MAX_FIT_RMS: f64 = 0.05;
pub const LIMIT_CYCLE_BAND: f64 = 0.03;
pub const POINCARE_TOL: f64 = 1e-3;

/// Guard inequality slack at a crossing, at unit distance from the anchor.
const GUARD_INEQ_TOL: f64 = 1e-9;
/// Slack for the reset image lying in the target domain closure, at unit
/// distance from the anchor.
const TARGET_TOL: f64 = 1e-9;
/// Slack before the flow counts as having left its domain, at unit distance
/// from the anchor.
const DOMAIN_EXIT_TOL: f64 = 1e-6;
/// Guard residual, relative to the state norm, for a state to count as on the guard.
const GUARD_TOL: f64 = 1e-12;
const BLOWUP_NORM: f64 = 1e8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("invalid execution config: {0}")]
    InvalidConfig(String),
    #[error("no Zeno time estimate: classification {classification:?}, ratio {rho:?}")]
    NotZeno { classification: Classification, rho: Option<f64> },
    #[error("certificate cannot be validated: {0}")]
    Certificate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionConfig {
    /// Id of the initial mode.
    pub initial_mode: usize,
    pub x0: Vec<f64>,
    /// Fixed parameter values.
    pub params: Vec<f64>,
    pub max_transitions: usize,
    /// Dwell time below which the execution stops as Zeno-suspect.
    pub min_dwell: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Final time.
    pub horizon: f64,
    /// Largest integration step.
    pub max_step: f64,
    /// Accepted steps allowed per interval.
    pub max_steps: usize,
}

impl ExecutionConfig {
    pub fn new(initial_mode: usize, x0: Vec<f64>, params: Vec<f64>) -> Self {
        ExecutionConfig {
            initial_mode,
            x0,
            params,
            max_transitions: DEFAULT_MAX_TRANSITIONS,
            min_dwell: DEFAULT_MIN_DWELL,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            horizon: DEFAULT_HORIZON,
            max_step: 1.0,
            max_steps: 1_000_000,
        }
    }

    pub fn validate(&self, sys: &HybridSystem) -> Result<(), SimError> {
        let mode = sys.mode(self.initial_mode)?;
        if self.x0.len() != sys.n_state() {
            return Err(SimError::InvalidConfig(format!(
                "x0 has {} entries for {} states",
                self.x0.len(),
                sys.n_state()
            )));
        }
        if self.params.len() != sys.registry.n_params() {
            return Err(SimError::InvalidConfig(format!(
                "{} parameter values for {} parameters",
                self.params.len(),
                sys.registry.n_params()
            )));
        }
        if self.x0.iter().chain(&self.params).any(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig("non-finite initial state or parameter".into()));
        }
        for (name, v) in
            [("rtol", self.rtol), ("atol", self.atol), ("horizon", self.horizon), ("max_step", self.max_step)]
        {
            if !(v > 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.min_dwell >= 0.0) {
            return Err(SimError::InvalidConfig(format!("min_dwell must be nonnegative, got {}", self.min_dwell)));
        }
        let pt = point(&self.x0, &self.params);
        if !sys.parameters.contains(&pt) {
            return Err(SimError::InvalidConfig(format!("parameters {:?} lie outside the parameter set", self.params)));
        }
        if !mode.domain_closure_contains(&pt, 1e-9) {
            return Err(SimError::InvalidConfig(format!(
                "x0 {:?} is outside the closure of the domain of mode {}",
                self.x0, self.initial_mode
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    TransitionBudget,
    /// A dwell time fell below the cutoff.
    DwellCutoff,
    Horizon,
    /// The flow left its domain or stalled without reaching a valid guard point.
    GuardUnreachable,
    /// Step size collapse, non-finite state or blow-up.
    IntegratorFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Continuous evolution in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mode: usize,
    /// Accepted integration points, endpoints included.
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    /// State on the guard before the reset.
    pub pre: Vec<f64>,
    /// Reset image.
    pub post: Vec<f64>,
    /// `|h0(pre)|`.
    pub guard_residual: f64,
    /// Accepted through the grazing fallback rather than transversality.
    pub grazing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub system_name: String,
    pub params: Vec<f64>,
    /// Modes per cycle of the underlying graph.
    pub cycle_len: usize,
    pub start_time: f64,
    pub intervals: Vec<Interval>,
    pub transitions: Vec<Transition>,
    pub termination: Termination,
    pub message: String,
    /// Sign changes of a guard equality discarded by the acceptance tests.
    pub rejected_crossings: usize,
}

impl Execution {
    pub fn transition_times(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.time).collect()
    }

    /// Times between consecutive transitions; the partial first interval is excluded.
    pub fn dwell_times(&self) -> Vec<f64> {
        self.transitions.windows(2).map(|w| w[1].time - w[0].time).collect()
    }

    pub fn mode_sequence(&self) -> Vec<usize> {
        self.intervals.iter().map(|i| i.mode).collect()
    }

    /// Mode and state at the end of the execution.
    pub fn final_state(&self) -> Option<(usize, &Sample)> {
        let last = self.intervals.last()?;
        Some((last.mode, last.samples.last()?))
    }

    /// Rows `interval, mode, t, x1..xn`.
    pub fn write_csv<W: Write>(&self, names: &[String], out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["interval".to_string(), "mode".into(), "t".into()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for (k, iv) in self.intervals.iter().enumerate() {
            for s in &iv.samples {
                let mut row = vec![k.to_string(), iv.mode.to_string(), fmt_f64(s.t)];
                row.extend(s.x.iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

fn point(x: &[f64], p: &[f64]) -> Vec<f64> {
    x.iter().chain(p).copied().collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Tolerance scale: distance to the anchor, capped at 1, so membership
/// slack shrinks with the state near an accumulation point.
fn anchor_scale(x: &[f64], anchor: &[f64]) -> f64 {
    x.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt().min(1.0)
}

/// Vector field of one mode at fixed parameters.
struct Flow<'a> {
    field: &'a [Polynomial],
    params: &'a [f64],
}

impl Flow<'_> {
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let pt = point(x, self.params);
        self.field.iter().map(|c| c.eval_unchecked(&pt)).collect()
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights.
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Embedded fourth-order weights.
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand–Prince step; returns the fifth-order solution and the scaled error norm.
fn dp_step(flow: &Flow, y: &[f64], h: f64, rtol: f64, atol: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut ys = y.to_vec();
        for (j, kj) in k.iter().enumerate() {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..n {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        if s == 6 {
            // Stage 7 evaluates at the fifth-order solution itself.
            k.push(flow.eval(&ys));
            let err = (0..n)
                .map(|i| {
                    let e = h * (0..7).map(|j| (B[j] - B4[j]) * k[j][i]).sum::<f64>();
                    let sc = atol + rtol * y[i].abs().max(ys[i].abs());
                    (e / sc).powi(2)
                })
                .sum::<f64>();
            return (ys, (err / n.max(1) as f64).sqrt());
        }
        k.push(flow.eval(&ys));
    }
    unreachable!("seven stages always return")
}

/// Fixed-size fifth-order step used for bisection inside an accepted step.
fn substep(flow: &Flow, y: &[f64], h: f64) -> Vec<f64> {
    dp_step(flow, y, h, 1.0, 1.0).0
}

struct ModeData<'a> {
    mode: &'a Mode,
    flow: Flow<'a>,
    edge: usize,
}

/// Where the guard equality crossed zero inside one step.
struct Crossing {
    dt: f64,
    pre: Vec<f64>,
}

fn locate_crossing(flow: &Flow, h0: &Polynomial, params: &[f64], y: &[f64], h: f64, ha: f64) -> Crossing {
    let g = |x: &[f64]| h0.eval_unchecked(&point(x, params));
    let (mut lo, mut hi) = (0.0f64, h);
    let mut pre = y.to_vec();
    // Bisect to adjacent floats in the step offset; the state resolution then
    // follows the local speed rather than the absolute time.
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let ym = substep(flow, y, mid);
        let gm = g(&ym);
        if gm == 0.0 {
            return Crossing { dt: mid, pre: ym };
        }
        if gm.signum() == ha.signum() {
            lo = mid;
            pre = ym;
        } else {
            hi = mid;
        }
    }
    Crossing { dt: lo, pre }
}

/// Transversality of the crossing, or the quadratic grazing fallback.
/// Returns `None` when the crossing is rejected.
fn crossing_kind(
    flow: &Flow,
    h0: &Polynomial,
    params: &[f64],
    y: &[f64],
    h: f64,
    ha: f64,
    pre: &[f64],
) -> Option<bool> {
    let pt = point(pre, params);
    let f = flow.eval(pre);
    let grad: Vec<f64> = (0..pre.len()).map(|i| h0.partial(i).eval_unchecked(&pt)).collect();
    let rate: f64 = grad.iter().zip(&f).map(|(a, b)| a * b).sum();
    let scale = norm(&grad) * norm(&f);
    if rate * -ha.signum() > 0.0 && rate.abs() > 1e-9 * scale {
        return Some(false);
    }
    if rate.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
        let g = |x: &[f64]| h0.eval_unchecked(&point(x, params));
        let gm = g(&substep(flow, y, 0.5 * h));
        let gb = g(&substep(flow, y, h));
        // Quadratic through (0, ha), (1/2, gm), (1, gb) in normalized time.
        let a2 = 2.0 * (ha - 2.0 * gm + gb);
        let a1 = -3.0 * ha + 4.0 * gm - gb;
        let q = |s: f64| ha + a1 * s + a2 * s * s;
        let mut prev = q(0.0);
        for i in 1..=64 {
            let cur = q(i as f64 / 64.0);
            if prev * cur <= 0.0 {
                return Some(true);
            }
            prev = cur;
        }
    }
    None
}

/// Integrates an execution of `sys` from `config`.
pub fn simulate(sys: &HybridSystem, config: &ExecutionConfig) -> Result<Execution, SimError> {
    config.validate(sys)?;
    let params = &config.params;
    let cycle_len = sys.cycle_order()?.len();
    let modes: Vec<ModeData> = sys
        .modes
        .iter()
        .map(|m| {
            let edge = sys
                .edges
                .iter()
                .position(|e| e.from == m.id)
                .ok_or_else(|| SimError::InvalidConfig(format!("mode {} has no outgoing edge", m.id)))?;
            Ok(ModeData { mode: m, flow: Flow { field: m.field.components(), params }, edge })
        })
        .collect::<Result<_, SimError>>()?;

    let mut exec = Execution {
        system_name: sys.name.clone(),
        params: params.clone(),
        cycle_len,
        start_time: 0.0,
        intervals: Vec::new(),
        transitions: Vec::new(),
        termination: Termination::Horizon,
        message: String::new(),
        rejected_crossings: 0,
    };
    let mut q = sys.mode_index(config.initial_mode)?;
    let mut t = 0.0f64;
    let mut y = config.x0.clone();
    let mut h = config.max_step.min(1e-3);

    // An initial state on the guard whose flow leaves the domain jumps at once.
    if let Some(post) = initial_jump(sys, &modes[q], params, &y) {
        let e = &sys.edges[modes[q].edge];
        exec.intervals.push(Interval { mode: modes[q].mode.id, samples: vec![Sample { t, x: y.clone() }] });
        exec.transitions.push(Transition {
            time: t,
            from: e.from,
            to: e.to,
            pre: y.clone(),
            post: post.clone(),
            guard_residual: e.guard.equality.eval_unchecked(&point(&y, params)).abs(),
            grazing: false,
        });
        q = sys.mode_index(e.to)?;
        y = post;
    }

    'intervals: loop {
        let md = &modes[q];
        let edge = &sys.edges[md.edge];
        let h0 = &edge.guard.equality;
        let mut samples = vec![Sample { t, x: y.clone() }];
        let mut steps = 0usize;
        if let Some(d) = exec.dwell_times().last().copied().or_else(|| exec.transitions.last().map(|_| f64::INFINITY)) {
            if d.is_finite() {
                h = h.min(0.25 * d).max(f64::MIN_POSITIVE);
            }
        }
        loop {
            if t >= config.horizon {
                exec.intervals.push(Interval { mode: md.mode.id, samples });
                exec.termination = Termination::Horizon;
                exec.message = format!("reached horizon {}", config.horizon);
                break 'intervals;
            }
            let step = h.min(config.max_step).min(config.horizon - t);
            let (y_new, err) = dp_step(&md.flow, &y, step, config.rtol, config.atol);
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) || err > 1.0 {
                h = step * if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                if h <= 1e-15 * t.abs().max(1.0) * 1e-6 {
                    exec.intervals.push(Interval { mode: md.mode.id, samples });
                    exec.termination = Termination::IntegratorFailure;
                    exec.message = format!("step size collapsed at t = {t}");
                    break 'intervals;
                }
                continue;
            }
            let ha = h0.eval_unchecked(&point(&y, params));
            let hb = h0.eval_unchecked(&point(&y_new, params));
            if ha != 0.0 && (ha * hb < 0.0 || hb == 0.0) {
                let cr = locate_crossing(&md.flow, h0, params, &y, step, ha);
                let pre_pt = point(&cr.pre, params);
                let ineq_ok = edge.guard.inequalities.iter().all(|g| {
                    g.poly.eval_unchecked(&pre_pt) >= -GUARD_INEQ_TOL * anchor_scale(&cr.pre, &md.mode.anchor)
                });
                let kind = if ineq_ok { crossing_kind(&md.flow, h0, params, &y, step, ha, &cr.pre) } else { None };
                if let Some(grazing) = kind {
                    let post = edge.reset.evaluate(&pre_pt)?;
                    let target = sys.mode(edge.to)?;
                    let tol = TARGET_TOL * anchor_scale(&post, &target.anchor);
                    if target.domain_closure_contains(&point(&post, params), tol) {
                        let tc = t + cr.dt;
                        samples.push(Sample { t: tc, x: cr.pre.clone() });
                        exec.intervals.push(Interval { mode: md.mode.id, samples });
                        exec.transitions.push(Transition {
                            time: tc,
                            from: edge.from,
                            to: edge.to,
                            pre: cr.pre,
                            post: post.clone(),
                            guard_residual: h0.eval_unchecked(&pre_pt).abs(),
                            grazing,
                        });
                        t = tc;
                        y = post;
                        q = sys.mode_index(edge.to)?;
                        let n_tr = exec.transitions.len();
                        if n_tr >= 2 && tc - exec.transitions[n_tr - 2].time < config.min_dwell {
                            exec.intervals.push(Interval { mode: edge.to, samples: vec![Sample { t, x: y.clone() }] });
                            exec.termination = Termination::DwellCutoff;
                            exec.message = format!(
                                "dwell time {} below cutoff {}",
                                tc - exec.transitions[n_tr - 2].time,
                                config.min_dwell
                            );
                            break 'intervals;
                        }
                        if n_tr >= config.max_transitions {
                            exec.intervals.push(Interval { mode: edge.to, samples: vec![Sample { t, x: y.clone() }] });
                            exec.termination = Termination::TransitionBudget;
                            exec.message = format!("{n_tr} transitions");
                            break 'intervals;
                        }
                        continue 'intervals;
                    }
                }
                exec.rejected_crossings += 1;
            }
            t += step;
            y = y_new;
            samples.push(Sample { t, x: y.clone() });
            steps += 1;
            let ny = norm(&y);
            if ny > BLOWUP_NORM {
                exec.intervals.push(Interval { mode: md.mode.id, samples });
                exec.termination = Termination::IntegratorFailure;
                exec.message = format!("state norm {ny:e} exceeded {BLOWUP_NORM:e}");
                break 'intervals;
            }
            if !md.mode.domain_closure_contains(&point(&y, params), DOMAIN_EXIT_TOL * anchor_scale(&y, &md.mode.anchor))
            {
                exec.intervals.push(Interval { mode: md.mode.id, samples });
                exec.termination = Termination::GuardUnreachable;
                exec.message =
                    format!("flow left the domain of mode {} at t = {t} without a valid guard crossing", md.mode.id);
                break 'intervals;
            }
            if norm(&md.flow.eval(&y)) == 0.0 {
                exec.intervals.push(Interval { mode: md.mode.id, samples });
                exec.termination = Termination::GuardUnreachable;
                exec.message = format!("flow of mode {} stalled at an equilibrium at t = {t}", md.mode.id);
                break 'intervals;
            }
            if steps >= config.max_steps {
                exec.intervals.push(Interval { mode: md.mode.id, samples });
                exec.termination = Termination::IntegratorFailure;
                exec.message = format!("{steps} steps in one interval");
                break 'intervals;
            }
            h = step * (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
        }
    }
    Ok(exec)
}

/// Reset image when `x` lies on the outgoing guard and the flow exits the domain.
fn initial_jump(sys: &HybridSystem, md: &ModeData, params: &[f64], x: &[f64]) -> Option<Vec<f64>> {
    let edge = &sys.edges[md.edge];
    let pt = point(x, params);
    let scale = norm(x).max(1.0);
    if edge.guard.equality.eval_unchecked(&pt).abs() > GUARD_TOL * scale {
        return None;
    }
    if edge
        .guard
        .inequalities
        .iter()
        .any(|g| g.poly.eval_unchecked(&pt) < -GUARD_INEQ_TOL * anchor_scale(x, &md.mode.anchor))
    {
        return None;
    }
    let f = md.flow.eval(x);
    let nf = norm(&f);
    if nf == 0.0 {
        return None;
    }
    let delta = 1e-6 * scale / nf;
    let probe: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + delta * b).collect();
    if md.mode.domain_closure_contains(&point(&probe, params), 0.0) {
        return None;
    }
    let post = edge.reset.evaluate(&pt).ok()?;
    let target = sys.mode(edge.to).ok()?;
    target
        .domain_closure_contains(&point(&post, params), TARGET_TOL * anchor_scale(&post, &target.anchor))
        .then_some(post)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Zeno,
    LimitCycle,
    Divergent,
    Inconclusive,
}

/// Empirical asymptotic diagnostics of one execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoDiagnostics {
    pub classification: Classification,
    /// Always `empirical`: derived from a finite execution.
    pub basis: String,
    pub transitions: usize,
    pub termination: Termination,
    pub dwell_times: Vec<f64>,
    pub cycle_len: usize,
    /// Per-cycle dwell sums entering the fit.
    pub cycle_dwells: Vec<f64>,
    /// Fitted per-cycle geometric ratio.
    pub rho: Option<f64>,
    /// RMS residual of the log-linear fit.
    pub fit_rms: Option<f64>,
    /// Standard error of the fitted log-ratio.
    pub log_rho_std_error: Option<f64>,
    /// Distance between the last two post-reset states on the same edge.
    pub poincare_distance: Option<f64>,
    /// Time of the last transition entering the fit.
    pub last_time: Option<f64>,
}

/// Least-squares fit of `log y_j = a + j log rho`: (rho, rms, std error of log rho).
fn geometric_fit(ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = ys.len();
    if n < 3 || ys.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = (0..n).map(|j| j as f64).collect();
    let ls: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n as f64;
    let lm = ls.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ls).map(|(x, l)| (x - xm) * (l - lm)).sum();
    let b = sxy / sxx;
    let a = lm - b * xm;
    let rss: f64 = xs.iter().zip(&ls).map(|(x, l)| (l - a - b * x).powi(2)).sum();
    let rms = (rss / n as f64).sqrt();
    let se = (rss / (n as f64 - 2.0) / sxx).sqrt();
    Some((b.exp(), rms, se))
}

pub fn classify(exec: &Execution) -> ZenoDiagnostics {
    let dwell = exec.dwell_times();
    let l = exec.cycle_len.max(1);
    let mut diag = ZenoDiagnostics {
        classification: Classification::Inconclusive,
        basis: "empirical".into(),
        transitions: exec.transitions.len(),
        termination: exec.termination,
        dwell_times: dwell.clone(),
        cycle_len: l,
        cycle_dwells: Vec::new(),
        rho: None,
        fit_rms: None,
        log_rho_std_error: None,
        poincare_distance: None,
        last_time: None,
    };
    let n_tr = exec.transitions.len();
    if n_tr > l {
        let a = &exec.transitions[n_tr - 1].post;
        let b = &exec.transitions[n_tr - 1 - l].post;
        diag.poincare_distance = Some(norm(&a.iter().zip(b).map(|(u, v)| u - v).collect::<Vec<_>>()));
    }
    if exec.termination == Termination::IntegratorFailure && exec.message.contains("exceeded") {
        diag.classification = Classification::Divergent;
        return diag;
    }
    if n_tr < MIN_TRANSITIONS {
        return diag;
    }
    let window = dwell.len().min(FIT_WINDOW);
    let cycles = window / l;
    let tail = &dwell[dwell.len() - cycles * l..];
    diag.cycle_dwells = tail.chunks(l).map(|c| c.iter().sum()).collect();
    diag.last_time = exec.transitions.last().map(|t| t.time);
    let Some((rho, rms, se)) = geometric_fit(&diag.cycle_dwells) else {
        return diag;
    };
    diag.rho = Some(rho);
    diag.fit_rms = Some(rms);
    diag.log_rho_std_error = Some(se);
    diag.classification = if rho < ZENO_RATIO && rms < MAX_FIT_RMS {
        Classification::Zeno
    } else if (rho - 1.0).abs() <= LIMIT_CYCLE_BAND && diag.poincare_distance.is_some_and(|d| d < POINCARE_TOL) {
        Classification::LimitCycle
    } else if rho > 1.0 + LIMIT_CYCLE_BAND {
        Classification::Divergent
    } else {
        Classification::Inconclusive
    };
    diag
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZenoTimeEstimate {
    pub tau_inf: f64,
    /// One-sigma error bar propagated from the ratio fit.
    pub error: f64,
}

/// `τ_N + Δ_N ρ/(1-ρ)` over the last fitted cycle.
pub fn zeno_time_estimate(diag: &ZenoDiagnostics) -> Result<ZenoTimeEstimate, SimError> {
    let not_zeno = || SimError::NotZeno { classification: diag.classification, rho: diag.rho };
    let rho = diag.rho.ok_or_else(not_zeno)?;
    if !(rho < 1.0) || diag.classification != Classification::Zeno {
        return Err(not_zeno());
    }
    let last = *diag.cycle_dwells.last().ok_or_else(not_zeno)?;
    let tau_n = diag.last_time.ok_or_else(not_zeno)?;
    let tail = last * rho / (1.0 - rho);
    let error = last / (1.0 - rho).powi(2) * rho * diag.log_rho_std_error.unwrap_or(0.0);
    Ok(ZenoTimeEstimate { tau_inf: tau_n + tail, error })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub count: usize,
    pub seed: u64,
    /// Parameter values; defaults to the centre of the parameter sampling box.
    pub params: Option<Vec<f64>>,
    pub max_transitions: usize,
    pub min_dwell: f64,
    pub rtol: f64,
    pub atol: f64,
    pub horizon: f64,
    /// Rejection-sampling draws allowed per initial condition.
    pub max_attempts: usize,
    /// Simulations run concurrently.
    pub jobs: usize,
}

impl BatchConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        BatchConfig {
            count,
            seed,
            params: None,
            max_transitions: DEFAULT_MAX_TRANSITIONS,
            min_dwell: DEFAULT_MIN_DWELL,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            horizon: DEFAULT_HORIZON,
            max_attempts: 100_000,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSample {
    pub index: usize,
    pub mode: usize,
    pub x0: Vec<f64>,
    pub classification: Classification,
    /// Distance of the final state to the anchor of the final mode.
    pub terminal_distance: f64,
    pub transitions: usize,
    pub termination: Termination,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub system_name: String,
    pub seed: u64,
    pub params: Vec<f64>,
    pub samples: Vec<BatchSample>,
    pub zeno_count: usize,
    pub fraction_zeno: f64,
    pub max_terminal_distance: f64,
}

/// Draws an initial condition in the union of neighborhood-domain intersections.
fn draw_initial(
    sys: &HybridSystem,
    params: &[f64],
    rng: &mut ChaCha8Rng,
    attempts: usize,
) -> Option<(usize, Vec<f64>)> {
    for _ in 0..attempts {
        let x: Vec<f64> =
            sys.state_box.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect();
        let pt = point(&x, params);
        if let Some(m) = sys.modes.iter().find(|m| m.neighborhood.contains_with_tol(&pt, 0.0) && m.domain_contains(&pt))
        {
            return Some((m.id, x));
        }
    }
    None
}

fn run_sample(
    sys: &HybridSystem,
    cfg: &BatchConfig,
    params: &[f64],
    index: usize,
) -> Result<Option<BatchSample>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let Some((mode, x0)) = draw_initial(sys, params, &mut rng, cfg.max_attempts) else {
        return Ok(None);
    };
    let mut ec = ExecutionConfig::new(mode, x0.clone(), params.to_vec());
    ec.max_transitions = cfg.max_transitions;
    ec.min_dwell = cfg.min_dwell;
    ec.rtol = cfg.rtol;
    ec.atol = cfg.atol;
    ec.horizon = cfg.horizon;
    let exec = simulate(sys, &ec)?;
    let diag = classify(&exec);
    let terminal_distance = match exec.final_state() {
        Some((m, s)) => {
            let z = &sys.mode(m)?.anchor;
            norm(&s.x.iter().zip(z).map(|(a, b)| a - b).collect::<Vec<_>>())
        }
        None => f64::INFINITY,
    };
    Ok(Some(BatchSample {
        index,
        mode,
        x0,
        classification: diag.classification,
        terminal_distance,
        transitions: exec.transitions.len(),
        termination: exec.termination,
        rho: diag.rho,
    }))
}

/// Simulates `cfg.count` seeded initial conditions drawn from the region a
/// VALID certificate covers and tallies the Zeno classifications.
pub fn batch_validate(sys: &HybridSystem, cert: &ZenoCertificate, cfg: &BatchConfig) -> Result<BatchReport, SimError> {
    if !cert.is_valid() {
        return Err(SimError::Certificate("certificate is not VALID".into()));
    }
    if cert.system_fingerprint != system_fingerprint(sys) {
        return Err(SimError::Certificate("certificate was issued for a different system".into()));
    }
    let params = match &cfg.params {
        Some(p) => p.clone(),
        None => sys.parameters.sample_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect(),
    };
    if params.len() != sys.registry.n_params() {
        return Err(SimError::InvalidConfig(format!(
            "{} parameter values for {} parameters",
            params.len(),
            sys.registry.n_params()
        )));
    }
    let jobs = cfg.jobs.max(1);
    let indices: Vec<usize> = (0..cfg.count).collect();
    let mut results: Vec<Option<BatchSample>> = Vec::with_capacity(cfg.count);
    for chunk in indices.chunks(jobs) {
        let out: Vec<Result<Option<BatchSample>, SimError>> = if chunk.len() == 1 {
            vec![run_sample(sys, cfg, &params, chunk[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&i| {
                        let params = &params;
                        s.spawn(move || run_sample(sys, cfg, params, i))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
            })
        };
        for r in out {
            results.push(r?);
        }
    }
    let samples: Vec<BatchSample> = results.into_iter().flatten().collect();
    let zeno_count = samples.iter().filter(|s| s.classification == Classification::Zeno).count();
    let fraction_zeno = if samples.is_empty() { 0.0 } else { zeno_count as f64 / samples.len() as f64 };
    let max_terminal_distance = samples.iter().map(|s| s.terminal_distance).fold(0.0, f64::max);
    Ok(BatchReport {
        system_name: sys.name.clone(),
        seed: cfg.seed,
        params,
        samples,
        zeno_count,
        fraction_zeno,
        max_terminal_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::VariableRegistry;

    fn synthetic(times: &[f64], cycle_len: usize, posts: impl Fn(usize) -> Vec<f64>) -> Execution {
        Execution {
            system_name: "synthetic".into(),
            params: vec![],
            cycle_len,
            start_time: 0.0,
            intervals: vec![],
            transitions: times
                .iter()
                .enumerate()
                .map(|(i, &t)| Transition {
                    time: t,
                    from: 1,
                    to: 1,
                    pre: posts(i),
                    post: posts(i),
                    guard_residual: 0.0,
                    grazing: false,
                })
                .collect(),
            termination: Termination::TransitionBudget,
            message: String::new(),
            rejected_crossings: 0,
        }
    }

    #[test]
    fn halving_dwell_times_sum_to_two() {
        // Δ_i = 2^-i from τ_0 = 0.
        let mut times = vec![0.0];
        for i in 0..40 {
            times.push(times[i] + 0.5f64.powi(i as i32));
        }
        let exec = synthetic(&times, 1, |i| vec![0.5f64.powi(i as i32), 0.0]);
        let d = classify(&exec);
        assert_eq!(d.classification, Classification::Zeno);
        assert!((d.rho.unwrap() - 0.5).abs() < 1e-9);
        let est = zeno_time_estimate(&d).unwrap();
        assert!((est.tau_inf - 2.0).abs() < 1e-12, "{}", est.tau_inf);
    }

    #[test]
    fn constant_dwell_periodic_orbit_is_limit_cycle() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.7).collect();
        let exec = synthetic(&times, 2, |i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        let d = classify(&exec);
        assert_eq!(d.classification, Classification::LimitCycle);
        assert!(matches!(zeno_time_estimate(&d), Err(SimError::NotZeno { .. })));
    }

    #[test]
    fn too_few_transitions_are_inconclusive() {
        let exec = synthetic(&[0.0, 1.0, 1.5, 1.75], 1, |_| vec![0.0]);
        assert_eq!(classify(&exec).classification, Classification::Inconclusive);
    }

    #[test]
    fn ratio_at_least_one_has_no_estimate() {
        let mut times = vec![0.0];
        for i in 0..30 {
            times.push(times[i] + 1.1f64.powi(i as i32));
        }
        let d = classify(&synthetic(&times, 1, |_| vec![0.0]));
        assert!(d.rho.unwrap() > 1.0);
        assert!(zeno_time_estimate(&d).is_err());
    }

    #[test]
    fn dormand_prince_is_exact_on_quartic_solutions() {
        // y' = 4 t^3 written autonomously as (t, y)' = (1, 4 t^3).
        let reg = VariableRegistry::standard(2, 0);
        let field = [Polynomial::parse(&reg, "1").unwrap(), Polynomial::parse(&reg, "4*x1^3").unwrap()];
        let flow = Flow { field: &field, params: &[] };
        let y = substep(&flow, &[0.5, 0.0625], 0.75);
        assert!((y[0] - 1.25).abs() < 1e-15);
        assert!((y[1] - 1.25f64.powi(4)).abs() < 1e-13, "{}", y[1]);
    }

    #[test]
    fn adaptive_error_estimate_shrinks_with_step() {
        let reg = VariableRegistry::standard(2, 0);
        let field = [Polynomial::parse(&reg, "-x2").unwrap(), Polynomial::parse(&reg, "x1").unwrap()];
        let flow = Flow { field: &field, params: &[] };
        let (_, e1) = dp_step(&flow, &[0.6, 0.8], 0.2, 1e-9, 1e-12);
        let (_, e2) = dp_step(&flow, &[0.6, 0.8], 0.1, 1e-9, 1e-12);
        // Local error of the embedded pair scales like h^5.
        assert!(e1 / e2 > 20.0 && e1 / e2 < 45.0, "{}", e1 / e2);
    }
}
