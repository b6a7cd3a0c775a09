//! Zeno-stability certification of cyclic hybrid systems.
//!
//! For fixed contraction constants `r_q` the Lyapunov conditions are affine in
//! every unknown, so [`certify`] scans a grid of `r` vectors, lowering and
//! solving one SOS program per entry. The first solution that passes the
//! independent [`check_certificate`] gates is returned.

pub mod certificate;
pub mod check;
pub mod conditions;
pub mod sweep;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zenocert_sdp::{solve, SdpError, SdpInstance, SdpSolution, SolveStatus, SolverConfig};

use crate::hybrid::{HybridError, HybridSystem};
use crate::io::system_fingerprint;
use crate::polynomial::PolyError;
use crate::sos::{Reconstruction, SosError, TRACE_REGULARIZATION};

pub use certificate::{CertificateStatus, ZenoCertificate};
pub use check::{check_certificate, CheckOptions, VerificationReport};
pub use conditions::{build, BuiltConditions, ConditionKind, Frames, Partner};
pub use sweep::{sweep_lower_bound, SweepProbe, SweepResult};

use certificate::{
    ConditionRecord, Constants, GramRecord, ModeCertificate, MultiplierRecord, ProbeRecord, SolverDiagnostics,
    CERTIFICATE_FORMAT, TOOL_VERSION,
};
use conditions::Multiplier;

/// Default contraction values; each is applied uniformly to all modes.
pub const DEFAULT_R_VALUES: [f64; 5] = [0.99, 0.9, 0.7, 0.5, 0.3];

#[derive(Debug, Error)]
pub enum CertError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error("invalid certification request: {0}")]
    InvalidRequest(String),
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),
    #[error("malformed certificate: {0}")]
    Format(String),
    #[error("certificate does not match the system: {0}")]
    Mismatch(String),
    #[error("invalid bracket: {message} (lower end: {lo_status}; upper end: {hi_status})")]
    InvalidBracket { lo_status: String, hi_status: String, message: String },
}

/// Which set of sufficient conditions to search for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CertMode {
    /// Lyapunov functions with jump contraction only.
    Standard,
    /// Separate barrier functions `B_q` of degree `b_degree`; `gamma_a` must be 1.
    Extended { b_degree: u32, gamma_a: f64, tie_b_to_v: bool },
}

/// Optional total-degree targets per condition class; a multiplier's degree
/// is the target minus its partner's degree, rounded down to even for SOS
/// multipliers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiplierDegrees {
    pub positivity: Option<u32>,
    pub decrease: Option<u32>,
    pub jump: Option<u32>,
    pub barrier: Option<u32>,
}

impl MultiplierDegrees {
    pub fn target(&self, kind: ConditionKind) -> Option<u32> {
        match kind {
            ConditionKind::Positivity { .. } => self.positivity,
            ConditionKind::Decrease { .. } | ConditionKind::Nonincrease { .. } => self.decrease,
            ConditionKind::Jump { .. } => self.jump,
            _ => self.barrier,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertificationRequest {
    pub system: HybridSystem,
    /// Lyapunov degree per mode, in system mode order.
    pub v_degrees: Vec<u32>,
    pub multiplier_degrees: MultiplierDegrees,
    /// Contraction vectors tried in order.
    pub r_grid: Vec<Vec<f64>>,
    pub mode: CertMode,
    /// Lower bound on α.
    pub alpha_min: f64,
    /// Decrease margin γ.
    pub gamma: f64,
    /// Maximum parameter degree of multiplier and Lyapunov terms.
    pub param_degree_cap: u32,
    /// Let `V_q` depend on the parameters.
    pub parameter_dependent_v: bool,
    pub trace_regularization: f64,
    pub solver: SolverConfig,
    pub check: CheckOptions,
    /// Number of r-grid probes solved concurrently.
    pub jobs: usize,
    /// Report failure without solving when the system alone rules out a
    /// certificate.
    pub structural_shortcut: bool,
}

impl CertificationRequest {
    /// Request with the default grid, uniform degree and standard conditions.
    pub fn new(system: HybridSystem, degree: u32) -> Self {
        let n = system.modes.len();
        let mut r_grid: Vec<Vec<f64>> = Vec::new();
        let hints: Option<Vec<f64>> =
            system.modes.iter().map(|m| system.outgoing(m.id).and_then(|e| e.r_hint)).collect();
        if let Some(h) = hints {
            r_grid.push(h);
        }
        for r in DEFAULT_R_VALUES {
            let v = vec![r; n];
            if !r_grid.contains(&v) {
                r_grid.push(v);
            }
        }
        CertificationRequest {
            system,
            v_degrees: vec![degree; n],
            multiplier_degrees: MultiplierDegrees::default(),
            r_grid,
            mode: CertMode::Standard,
            alpha_min: 1e-6,
            gamma: 1.0,
            param_degree_cap: 2,
            parameter_dependent_v: false,
            trace_regularization: TRACE_REGULARIZATION,
            solver: SolverConfig::default(),
            check: CheckOptions::default(),
            jobs: 1,
            structural_shortcut: true,
        }
    }

    pub fn validate(&self) -> Result<(), CertError> {
        let report = self.system.validate();
        if !report.is_valid() {
            return Err(CertError::InvalidRequest(report.violations.join("; ")));
        }
        let n = self.system.modes.len();
        if self.v_degrees.len() != n {
            return Err(CertError::InvalidRequest(format!("{} V degrees for {n} modes", self.v_degrees.len())));
        }
        if let Some(d) = self.v_degrees.iter().find(|&&d| d == 0 || d % 2 == 1) {
            return Err(CertError::InvalidRequest(format!("V degree must be even and positive, got {d}")));
        }
        if self.r_grid.is_empty() {
            return Err(CertError::InvalidRequest("empty r grid".into()));
        }
        for r in &self.r_grid {
            if r.len() != n {
                return Err(CertError::InvalidRequest(format!("r vector {r:?} has {} entries for {n} modes", r.len())));
            }
            if let Some(bad) = r.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
                return Err(CertError::InvalidRequest(format!("r value {bad} outside (0, 1]")));
            }
            if !r.iter().any(|&v| v < 1.0) {
                return Err(CertError::InvalidRequest(format!("r vector {r:?} has no entry below 1")));
            }
        }
        if let CertMode::Extended { b_degree, gamma_a, .. } = self.mode {
            if gamma_a != 1.0 {
                return Err(CertError::UnsupportedMode(format!("gamma_a = {gamma_a}; only 1 is supported")));
            }
            if b_degree == 0 {
                return Err(CertError::InvalidRequest("barrier degree must be positive".into()));
            }
        }
        if !(self.alpha_min > 0.0) || !(self.gamma > 0.0) {
            return Err(CertError::InvalidRequest("alpha_min and gamma must be positive".into()));
        }
        self.solver.validate()?;
        Ok(())
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            CertMode::Standard => "standard",
            CertMode::Extended { .. } => "extended",
        }
    }

    /// SHA-256 over the system fingerprint and every search setting.
    pub fn fingerprint(&self) -> String {
        let body = serde_json::json!({
            "system": system_fingerprint(&self.system),
            "v_degrees": self.v_degrees,
            "multiplier_degrees": self.multiplier_degrees,
            "r_grid": self.r_grid,
            "mode": self.mode,
            "alpha_min": self.alpha_min,
            "gamma": self.gamma,
            "param_degree_cap": self.param_degree_cap,
            "parameter_dependent_v": self.parameter_dependent_v,
            "trace_regularization": self.trace_regularization,
            "solver": self.solver,
            "check": self.check,
        });
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }
}

/// Why certification failed, probe by probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub system_name: String,
    pub request_fingerprint: String,
    /// Solve of the contraction-independent conditions, when it ran.
    pub prescreen: Option<ProbeRecord>,
    pub probes: Vec<ProbeRecord>,
    /// Structural observations explaining the failure.
    pub notes: Vec<String>,
}

impl FailureReport {
    /// Every probe ended in a numerical failure rather than an infeasibility verdict.
    pub fn numerical_only(&self) -> bool {
        let all: Vec<&ProbeRecord> = self.prescreen.iter().chain(&self.probes).collect();
        !all.is_empty() && all.iter().all(|p| p.status == "NumericalFailure" || p.status == "IterLimit")
    }
}

#[derive(Debug, Clone)]
pub enum CertifyOutcome {
    Certified(Box<ZenoCertificate>),
    Failed(FailureReport),
}

impl CertifyOutcome {
    pub fn certificate(&self) -> Option<&ZenoCertificate> {
        match self {
            CertifyOutcome::Certified(c) => Some(c),
            CertifyOutcome::Failed(_) => None,
        }
    }
}

fn status_name(s: SolveStatus) -> String {
    format!("{s:?}")
}

/// Solves, retrying once with tightened tolerances after a numerical failure.
fn solve_with_retry(inst: &SdpInstance, cfg: &SolverConfig) -> Result<SdpSolution, CertError> {
    let sol = solve(inst, cfg)?;
    if matches!(sol.status, SolveStatus::NumericalFailure | SolveStatus::IterLimit) {
        let tight = SolverConfig {
            feasibility_tol: cfg.feasibility_tol * 0.1,
            gap_tol: cfg.gap_tol * 0.1,
            max_iterations: cfg.max_iterations * 2,
            step_fraction: cfg.step_fraction.min(0.95),
            ..*cfg
        };
        let retry = solve(inst, &tight)?;
        if retry.status == SolveStatus::Optimal || sol.status == retry.status {
            return Ok(retry);
        }
    }
    Ok(sol)
}

/// Explanations that follow from the system alone, and whether one of them
/// proves that no certificate exists.
fn structural_notes(req: &CertificationRequest) -> (Vec<String>, bool) {
    let sys = &req.system;
    let mut notes = Vec::new();
    let mut obstructed = false;
    let mut params: Vec<Vec<f64>> = vec![sys.parameters.sample_box.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()];
    params.extend(
        sys.parameters
            .sample_box
            .iter()
            .enumerate()
            .flat_map(|(k, &(lo, hi))| {
                let mid = params[0].clone();
                [lo, hi].into_iter().map(move |v| {
                    let mut p = mid.clone();
                    p[k] = v;
                    p
                })
            })
            .collect::<Vec<_>>(),
    );
    for m in &sys.modes {
        for p in &params {
            let mut pt = m.anchor.clone();
            pt.extend_from_slice(p);
            let f: Vec<f64> = m.field.components().iter().map(|c| c.eval_unchecked(&pt)).collect();
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            let in_region = m.neighborhood.closure_contains(&pt, 1e-9) && m.domain_closure_contains(&pt, 1e-9);
            if norm <= 1e-12 && in_region && req.mode == CertMode::Standard {
                obstructed = true;
                notes.push(format!(
                    "mode {}: the vector field vanishes at the anchor {:?} (parameters {:?}), which lies in the closure of the \
                     neighborhood and domain; the decrease condition evaluates to at most -gamma there for every candidate, \
                     so no certificate of this form exists at any degree",
                    m.id, m.anchor, p
                ));
                break;
            }
        }
    }
    let z: BTreeMap<usize, Vec<f64>> = sys.modes.iter().map(|m| (m.id, m.anchor.clone())).collect();
    if let Ok(report) = sys.check_zeno_equilibrium(&z, &params[0]) {
        for e in report.edges.iter().filter(|e| !e.on_guard || !e.reset_consistent) {
            notes.push(format!(
                "edge ({}, {}): anchors are not a Zeno equilibrium (on guard: {}, reset consistent: {})",
                e.from, e.to, e.on_guard, e.reset_consistent
            ));
        }
    }
    (notes, obstructed)
}

fn probe_record(r: &[f64], sol: &SdpSolution) -> ProbeRecord {
    ProbeRecord {
        r: r.to_vec(),
        status: status_name(sol.status),
        iterations: sol.iterations,
        message: sol.message.clone(),
    }
}

struct Probe {
    built: BuiltConditions,
    lowered: crate::sos::Lowered,
    solution: SdpSolution,
}

fn run_probe(req: &CertificationRequest, frames: &Frames, r: Option<&[f64]>) -> Result<Probe, CertError> {
    let built = build(req, frames, r)?;
    let lowered = built.program.lower()?;
    let solution = solve_with_retry(&lowered.instance, &req.solver)?;
    Ok(Probe { built, lowered, solution })
}

/// Assembles an unverified certificate from a reconstructed solution.
fn assemble(
    req: &CertificationRequest,
    frames: &Frames,
    r: &[f64],
    probe: &Probe,
    rec: &Reconstruction,
    probes: Vec<ProbeRecord>,
) -> Result<ZenoCertificate, CertError> {
    let sys = &req.system;
    let reg = &sys.registry;
    let n = reg.n_state();
    let unshift = |local: &crate::polynomial::Polynomial, z: &[f64]| -> Result<String, CertError> {
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        Ok(local.shifted(&neg)?.to_text())
    };
    let built = &probe.built;
    let mut modes = Vec::new();
    for (q, m) in frames.modes.iter().enumerate() {
        let v = unshift(&rec.decisions[built.v[q].id], &m.anchor)?;
        let b = match &built.b {
            Some(bs) => Some(unshift(&rec.decisions[bs[q].id], &m.anchor)?),
            None => None,
        };
        modes.push(ModeCertificate { id: m.id, anchor: m.anchor.clone(), v, b });
    }
    let mut conditions = Vec::new();
    for (bc, report) in built.conditions.iter().zip(&rec.constraints) {
        let multipliers = bc
            .multipliers
            .iter()
            .map(|(partner, m)| match m {
                Multiplier::Sos(s) => {
                    let val = &rec.sos_unknowns[s.id];
                    MultiplierRecord {
                        partner: *partner,
                        poly: val.poly.to_text(),
                        gram: Some(GramRecord::new(reg, &s.basis, &val.gram)),
                    }
                }
                Multiplier::Free(d) => {
                    MultiplierRecord { partner: *partner, poly: rec.decisions[d.id].to_text(), gram: None }
                }
            })
            .collect();
        conditions.push(ConditionRecord {
            label: bc.label.clone(),
            kind: bc.kind,
            multipliers,
            gram: GramRecord::new(reg, &report.basis, &report.gram),
        });
    }
    let extended = built.b.is_some();
    let sol = &probe.solution;
    Ok(ZenoCertificate {
        format: CERTIFICATE_FORMAT.into(),
        status: CertificateStatus::Unverified,
        system_name: sys.name.clone(),
        system_fingerprint: system_fingerprint(sys),
        request_fingerprint: req.fingerprint(),
        tool_version: TOOL_VERSION.into(),
        seed: req.check.seed,
        mode: req.mode_name().into(),
        variables: reg.names()[..n].to_vec(),
        parameters: reg.names()[n..].to_vec(),
        constants: Constants {
            alpha: rec.values.get(built.alpha),
            gamma: req.gamma,
            r: r.to_vec(),
            gamma_a: extended.then_some(1.0),
            gamma_b: extended.then_some(1.0),
        },
        modes,
        conditions,
        diagnostics: SolverDiagnostics {
            status: status_name(sol.status),
            iterations: sol.iterations,
            primal_residual: sol.residuals.primal,
            dual_residual: sol.residuals.dual,
            gap: sol.residuals.gap,
            max_coefficient_error: rec.max_coefficient_error(),
            min_eigenvalue: rec.min_eigenvalue(),
            trace_regularization: req.trace_regularization,
            sdp_blocks: probe.lowered.instance.blocks.len(),
            sdp_rows: probe.lowered.instance.n_rows(),
            probes,
        },
        verification: None,
    })
}

/// Searches the r grid for a verified certificate.
pub fn certify(req: &CertificationRequest) -> Result<CertifyOutcome, CertError> {
    req.validate()?;
    let frames = Frames::new(&req.system)?;
    let (notes, obstructed) = structural_notes(req);
    let fail = |prescreen, probes, notes| {
        Ok(CertifyOutcome::Failed(FailureReport {
            system_name: req.system.name.clone(),
            request_fingerprint: req.fingerprint(),
            prescreen,
            probes,
            notes,
        }))
    };

    if obstructed && req.structural_shortcut {
        return fail(None, Vec::new(), notes);
    }

    let pre = run_probe(req, &frames, None)?;
    let pre_record = probe_record(&[], &pre.solution);
    if matches!(pre.solution.status, SolveStatus::PrimalInfeasible) {
        let mut notes = notes;
        notes.push("the contraction-independent conditions are already infeasible, so no r value can help".into());
        return fail(Some(pre_record), Vec::new(), notes);
    }
    drop(pre);

    let mut records = Vec::new();
    let jobs = req.jobs.max(1);
    for chunk in req.r_grid.chunks(jobs) {
        let results: Vec<Result<Probe, CertError>> = if chunk.len() == 1 {
            vec![run_probe(req, &frames, Some(&chunk[0]))]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|r| s.spawn(|| run_probe(req, &frames, Some(r)))).collect();
                handles.into_iter().map(|h| h.join().expect("probe thread panicked")).collect()
            })
        };
        for (r, res) in chunk.iter().zip(results) {
            let probe = res?;
            let mut record = probe_record(r, &probe.solution);
            if probe.solution.status != SolveStatus::Optimal {
                records.push(record);
                continue;
            }
            let rec = probe.built.program.reconstruct(&probe.lowered, &probe.solution)?;
            records.push(record.clone());
            let mut cert = assemble(req, &frames, r, &probe, &rec, records.clone())?;
            check::verify_and_attach(&req.system, &mut cert, &req.check)?;
            if cert.is_valid() {
                return Ok(CertifyOutcome::Certified(Box::new(cert)));
            }
            let failures = cert.verification.as_ref().map(|v| v.failures.join(", ")).unwrap_or_default();
            record.message = format!("solved but verification failed: {failures}");
            *records.last_mut().expect("pushed") = record;
        }
    }
    fail(Some(pre_record), records, notes)
}
