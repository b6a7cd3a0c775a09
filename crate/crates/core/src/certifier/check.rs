//! Independent verification of a certificate against a system.
//!
//! The algebraic gate rebuilds every asserted-SOS expression from the system
//! and the certificate's polynomials with plain polynomial arithmetic and
//! compares it to the recorded Gram form. The sampling gate evaluates the
//! underlying pointwise inequalities on seeded random points of each
//! condition's region.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hybrid::{HybridSystem, SemialgebraicSet};
use crate::io::system_fingerprint;
use crate::polynomial::{Polynomial, PolynomialVector, VariableRegistry};
use crate::sos::{gram_polynomial, min_eigenvalue};

use super::certificate::{CertificateStatus, GramRecord, ZenoCertificate};
use super::conditions::{condition_kinds, state_norm_sq, ConditionKind, Frames};
use super::{CertError, CertMode};

/// Thresholds of the verification gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOptions {
    /// Sample points per condition.
    pub budget: usize,
    pub seed: u64,
    /// Coefficient-matching residual, relative to the expression's largest coefficient (at least 1).
    pub residual_tol: f64,
    /// Gram eigenvalue floor, relative to the matrix's largest entry (at least 1).
    pub eigen_tol: f64,
    /// Pointwise slack, relative to the expression's largest coefficient (at least 1).
    pub sample_tol: f64,
    /// Bound on `|V_q(z_q)|`.
    pub anchor_tol: f64,
    /// Grid levels per parameter inside the sampling box.
    pub param_levels: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            budget: 1000,
            seed: 0,
            residual_tol: 1e-6,
            eigen_tol: 1e-7,
            sample_tol: 1e-6,
            anchor_tol: 1e-8,
            param_levels: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgebraicCheck {
    pub label: String,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingCheck {
    pub label: String,
    pub points: usize,
    /// Smallest value of the condition's expression over the sample.
    pub worst_value: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Original-coordinate state and parameters at the worst value.
    pub worst_point: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCheck {
    pub mode: usize,
    pub max_abs_value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub valid: bool,
    pub options: CheckOptions,
    pub algebraic: Vec<AlgebraicCheck>,
    pub sampling: Vec<SamplingCheck>,
    pub anchors: Vec<AnchorCheck>,
    /// Violations of the request invariants (contraction constants, α, γ, coverage).
    pub invariant_violations: Vec<String>,
    /// Labels of every failing check.
    pub failures: Vec<String>,
}

/// Concrete polynomials of a certificate in mode-local coordinates.
struct Parsed {
    v: Vec<Polynomial>,
    b: Option<Vec<Polynomial>>,
}

fn parse_local(reg: &Arc<VariableRegistry>, cert: &ZenoCertificate, frames: &Frames) -> Result<Parsed, CertError> {
    if cert.modes.len() != frames.modes.len() {
        return Err(CertError::Mismatch(format!(
            "certificate has {} modes, system has {}",
            cert.modes.len(),
            frames.modes.len()
        )));
    }
    let mut v = Vec::new();
    let mut b = Vec::new();
    for (mc, mf) in cert.modes.iter().zip(&frames.modes) {
        if mc.id != mf.id || mc.anchor != mf.anchor {
            return Err(CertError::Mismatch(format!("mode {} anchor or id differs from the system", mc.id)));
        }
        v.push(Polynomial::parse(reg, &mc.v)?.shifted(&mf.anchor)?);
        if let Some(t) = &mc.b {
            b.push(Polynomial::parse(reg, t)?.shifted(&mf.anchor)?);
        }
    }
    let b = if b.is_empty() { None } else { Some(b) };
    Ok(Parsed { v, b })
}

fn field_derivative(p: &Polynomial, f: &PolynomialVector) -> Result<Polynomial, CertError> {
    Ok(p.gradient().dot(f)?)
}

/// The localized expression of a condition, in the source mode's local frame.
fn main_poly(
    kind: ConditionKind,
    frames: &Frames,
    parsed: &Parsed,
    cert: &ZenoCertificate,
) -> Result<Polynomial, CertError> {
    let q = kind.mode(frames);
    let reg = parsed.v[q].registry().clone();
    let c = &cert.constants;
    let f = &frames.modes[q].field;
    let barrier = |i: usize| -> Result<&Polynomial, CertError> {
        parsed
            .b
            .as_ref()
            .map(|b| &b[i])
            .ok_or_else(|| CertError::Format(format!("{} needs barrier functions", kind.tag())))
    };
    let gamma = Polynomial::constant(&reg, c.gamma);
    Ok(match kind {
        ConditionKind::Positivity { .. } => &parsed.v[q] - &state_norm_sq(&reg).scale(c.alpha),
        ConditionKind::Decrease { .. } => &(-&field_derivative(&parsed.v[q], f)?) - &gamma,
        ConditionKind::Nonincrease { .. } => -&field_derivative(&parsed.v[q], f)?,
        ConditionKind::BarrierPositivity { .. } => barrier(q)?.clone(),
        ConditionKind::BarrierDecrease { .. } => &(-&field_derivative(barrier(q)?, f)?) - &gamma,
        ConditionKind::Jump { edge, .. } => {
            let ef = &frames.edges[edge];
            &parsed.v[q].scale(c.r[q]) - &parsed.v[ef.to].compose(&ef.reset)?
        }
        ConditionKind::BarrierJump { edge, .. } => {
            let ef = &frames.edges[edge];
            let gb = c.gamma_b.unwrap_or(1.0);
            &parsed.v[ef.to].compose(&ef.reset)?.scale(gb) - &barrier(ef.to)?.compose(&ef.reset)?
        }
    })
}

fn gram_check(
    reg: &Arc<VariableRegistry>,
    poly: &Polynomial,
    gram: &GramRecord,
    opts: &CheckOptions,
) -> Result<(f64, f64, bool), CertError> {
    let basis = gram.basis(reg)?;
    let q = gram.matrix()?;
    let asym = (0..q.nrows())
        .flat_map(|i| (0..q.ncols()).map(move |j| (i, j)))
        .fold(0.0f64, |a, (i, j)| a.max((q[(i, j)] - q[(j, i)]).abs()));
    let residual = (poly - &gram_polynomial(reg, &basis, &q)).max_abs_coefficient().max(asym);
    let eig = min_eigenvalue(&q);
    let scale = poly.max_abs_coefficient().max(1.0);
    let qmax = q.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let ok = residual <= opts.residual_tol * scale && eig >= -opts.eigen_tol * qmax;
    Ok((residual, eig, ok))
}

fn parameter_grid(sys: &HybridSystem, levels: usize) -> Vec<Vec<f64>> {
    let n = sys.registry.n_state();
    let mut grid: Vec<Vec<f64>> = vec![Vec::new()];
    for &(lo, hi) in &sys.parameters.sample_box {
        let k = if hi > lo { levels.max(2) } else { 1 };
        let vals: Vec<f64> =
            (0..k).map(|i| if k == 1 { lo } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 }).collect();
        grid = grid.into_iter().flat_map(|g| vals.iter().map(move |&v| [g.clone(), vec![v]].concat())).collect();
    }
    grid.into_iter()
        .filter(|p| {
            let mut full = vec![0.0; n];
            full.extend_from_slice(p);
            sys.parameters.constraints.iter().all(|c| c.poly.eval_unchecked(&full) >= 0.0)
        })
        .collect()
}

const MEMBERSHIP_TOL: f64 = 1e-9;

/// Moves `x` onto `{h = 0}` by Newton steps along the gradient.
fn project(h: &Polynomial, grad: &PolynomialVector, x: &mut [f64], n: usize) -> bool {
    for _ in 0..30 {
        let v = h.eval_unchecked(x);
        if v.abs() <= 1e-12 {
            return true;
        }
        let g: Vec<f64> = grad.components().iter().map(|c| c.eval_unchecked(x)).collect();
        let gg: f64 = g.iter().map(|a| a * a).sum();
        if gg < 1e-300 {
            return false;
        }
        for i in 0..n {
            x[i] -= v * g[i] / gg;
        }
    }
    h.eval_unchecked(x).abs() <= 1e-10
}

fn sample_condition(
    sys: &HybridSystem,
    kind: ConditionKind,
    frames: &Frames,
    main: &Polynomial,
    grid: &[Vec<f64>],
    opts: &CheckOptions,
    stream: u64,
) -> SamplingCheck {
    let n = sys.registry.n_state();
    let q = kind.mode(frames);
    let mode = &sys.modes[q];
    let piece: &SemialgebraicSet = &mode.domain[kind.piece()];
    let edge = kind.edge().map(|e| &sys.edges[e]);
    let grad = edge.map(|e| e.guard.equality.gradient());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let tolerance = opts.sample_tol * main.max_abs_coefficient().max(1.0);
    let (mut points, mut worst, mut worst_point) = (0usize, f64::INFINITY, Vec::new());
    let max_attempts = 200 * opts.budget.max(1);
    let mut attempts = 0;
    while points < opts.budget && attempts < max_attempts && !grid.is_empty() {
        attempts += 1;
        let p = &grid[attempts % grid.len()];
        let mut x: Vec<f64> = sys.state_box.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
        x.extend_from_slice(p);
        if let (Some(e), Some(g)) = (edge, grad.as_ref()) {
            if !project(&e.guard.equality, g, &mut x, n) {
                continue;
            }
            if !e.guard.inequalities.iter().all(|i| i.poly.eval_unchecked(&x) >= -MEMBERSHIP_TOL) {
                continue;
            }
        }
        if !mode.neighborhood.closure_contains(&x, MEMBERSHIP_TOL) || !piece.closure_contains(&x, MEMBERSHIP_TOL) {
            continue;
        }
        let mut y = x.clone();
        for i in 0..n {
            y[i] -= mode.anchor[i];
        }
        let value = main.eval_unchecked(&y);
        points += 1;
        if value < worst {
            worst = value;
            worst_point = x;
        }
    }
    let note = if points < opts.budget {
        Some(format!("only {points} of {} sample points found in the region", opts.budget))
    } else {
        None
    };
    SamplingCheck {
        label: kind.label(frames),
        points,
        worst_value: if points == 0 { f64::NAN } else { worst },
        tolerance,
        passed: note.is_none() && worst >= -tolerance,
        worst_point,
        note,
    }
}

/// Verifies a certificate against a system. Errors are reserved for
/// certificates that do not belong to the system or cannot be parsed.
pub fn check_certificate(
    sys: &HybridSystem,
    cert: &ZenoCertificate,
    opts: &CheckOptions,
) -> Result<VerificationReport, CertError> {
    let reg = &sys.registry;
    let n = reg.n_state();
    if cert.variables != reg.names()[..n] || cert.parameters != reg.names()[n..] {
        return Err(CertError::Mismatch("certificate variables differ from the system".into()));
    }
    let fp = system_fingerprint(sys);
    if cert.system_fingerprint != fp {
        return Err(CertError::Mismatch(format!(
            "system fingerprint {} does not match certificate {}",
            fp, cert.system_fingerprint
        )));
    }
    let frames = Frames::new(sys)?;
    let parsed = parse_local(reg, cert, &frames)?;
    let mode = match cert.mode.as_str() {
        "standard" => CertMode::Standard,
        "extended" => CertMode::Extended { b_degree: 0, gamma_a: 1.0, tie_b_to_v: parsed.b.is_none() },
        other => return Err(CertError::Format(format!("unknown certificate mode {other:?}"))),
    };

    let mut invariants = Vec::new();
    let c = &cert.constants;
    if c.r.len() != frames.modes.len() {
        invariants.push(format!("{} contraction constants for {} modes", c.r.len(), frames.modes.len()));
    } else {
        if let Some(bad) = c.r.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            invariants.push(format!("contraction constant {bad} outside (0, 1]"));
        }
        if !c.r.iter().any(|&r| r < 1.0) {
            invariants.push("no contraction constant is below 1".into());
        }
    }
    if !(c.alpha > 0.0) {
        invariants.push(format!("alpha = {} is not positive", c.alpha));
    }
    if !(c.gamma > 0.0) {
        invariants.push(format!("gamma = {} is not positive", c.gamma));
    }
    if c.gamma_a.is_some_and(|g| g != 1.0) {
        invariants.push("gamma_a must be 1".into());
    }
    if c.gamma_b.is_some_and(|g| !(g >= 0.0)) {
        invariants.push("gamma_b must be nonnegative".into());
    }
    let expected = condition_kinds(&frames, &mode);
    for k in &expected {
        if !cert.conditions.iter().any(|r| r.kind == *k) {
            invariants.push(format!("missing condition {}", k.label(&frames)));
        }
    }

    let mut algebraic = Vec::new();
    if invariants.is_empty() {
        for rec in &cert.conditions {
            if !expected.contains(&rec.kind) {
                algebraic.push(AlgebraicCheck {
                    label: rec.label.clone(),
                    residual: f64::NAN,
                    min_eigenvalue: f64::NAN,
                    passed: false,
                    note: Some("condition does not belong to this system".into()),
                });
                continue;
            }
            let allowed = rec.kind.partners(&frames);
            let mut expr = main_poly(rec.kind, &frames, &parsed, cert)?;
            let mut note = None;
            let mut mult_ok = true;
            for m in &rec.multipliers {
                if !allowed.contains(&m.partner) {
                    note = Some(format!("multiplier partner {:?} is not available here", m.partner));
                    mult_ok = false;
                    continue;
                }
                let mp = Polynomial::parse(reg, &m.poly)?;
                match (&m.gram, m.partner.is_equality()) {
                    (Some(g), _) => {
                        let (res, eig, ok) = gram_check(reg, &mp, g, opts)?;
                        if !ok {
                            mult_ok = false;
                            note = Some(format!(
                                "multiplier for {:?}: residual {res:.3e}, min eigenvalue {eig:.3e}",
                                m.partner
                            ));
                        }
                    }
                    (None, true) => {}
                    (None, false) => {
                        mult_ok = false;
                        note = Some(format!("multiplier for {:?} has no SOS certificate", m.partner));
                    }
                }
                expr = &expr - &(&mp * rec.kind.partner_poly(&frames, m.partner));
            }
            let (residual, eig, ok) = gram_check(reg, &expr, &rec.gram, opts)?;
            algebraic.push(AlgebraicCheck {
                label: rec.label.clone(),
                residual,
                min_eigenvalue: eig,
                passed: ok && mult_ok,
                note,
            });
        }
    }

    let grid = parameter_grid(sys, opts.param_levels);
    let mut sampling = Vec::new();
    if invariants.is_empty() {
        for (i, kind) in expected.iter().enumerate() {
            let main = main_poly(*kind, &frames, &parsed, cert)?;
            sampling.push(sample_condition(sys, *kind, &frames, &main, &grid, opts, i as u64));
        }
    }

    let mut anchors = Vec::new();
    for (q, m) in sys.modes.iter().enumerate() {
        let mut worst = 0.0f64;
        for p in &grid {
            let mut pt = vec![0.0; n];
            pt.extend_from_slice(p);
            worst = worst.max(parsed.v[q].eval_unchecked(&pt).abs());
        }
        anchors.push(AnchorCheck { mode: m.id, max_abs_value: worst, passed: worst <= opts.anchor_tol });
    }

    let mut failures: Vec<String> = invariants.clone();
    failures.extend(algebraic.iter().filter(|a| !a.passed).map(|a| format!("algebraic {}", a.label)));
    failures.extend(sampling.iter().filter(|s| !s.passed).map(|s| format!("sampling {}", s.label)));
    failures.extend(anchors.iter().filter(|a| !a.passed).map(|a| format!("anchor value of V{}", a.mode)));
    Ok(VerificationReport {
        valid: failures.is_empty(),
        options: opts.clone(),
        algebraic,
        sampling,
        anchors,
        invariant_violations: invariants,
        failures,
    })
}

/// Runs [`check_certificate`] and stamps the result onto the certificate.
pub fn verify_and_attach(sys: &HybridSystem, cert: &mut ZenoCertificate, opts: &CheckOptions) -> Result<(), CertError> {
    let report = check_certificate(sys, cert, opts)?;
    cert.status = if report.valid { CertificateStatus::Valid } else { CertificateStatus::Invalid };
    cert.verification = Some(report);
    Ok(())
}
