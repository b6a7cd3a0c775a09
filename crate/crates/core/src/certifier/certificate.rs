//! Serialized Zeno-stability certificates.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::polynomial::{Monomial, Polynomial, VariableRegistry};

use super::check::VerificationReport;
use super::conditions::{ConditionKind, Partner};
use super::CertError;

pub const CERTIFICATE_FORMAT: &str = "zenocert-certificate/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CertificateStatus {
    /// All verification gates passed.
    Valid,
    Invalid,
    Unverified,
}

/// Gram matrix over a monomial basis, both as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramRecord {
    pub basis: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl GramRecord {
    pub fn new(reg: &VariableRegistry, basis: &[Monomial], q: &DMatrix<f64>) -> Self {
        GramRecord {
            basis: basis.iter().map(|m| m.to_text(reg)).collect(),
            matrix: (0..q.nrows()).map(|i| (0..q.ncols()).map(|j| q[(i, j)]).collect()).collect(),
        }
    }

    pub fn basis(&self, reg: &Arc<VariableRegistry>) -> Result<Vec<Monomial>, CertError> {
        self.basis
            .iter()
            .map(|t| {
                let p = Polynomial::parse(reg, t)?;
                match p.terms().collect::<Vec<_>>().as_slice() {
                    [(m, c)] if *c == 1.0 => Ok((*m).clone()),
                    _ => Err(CertError::Format(format!("basis entry {t:?} is not a monomial"))),
                }
            })
            .collect()
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>, CertError> {
        let n = self.basis.len();
        if self.matrix.len() != n || self.matrix.iter().any(|r| r.len() != n) {
            return Err(CertError::Format(format!("Gram matrix is not {n}x{n}")));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| self.matrix[i][j]))
    }

    fn scale(&mut self, s: f64) {
        for row in &mut self.matrix {
            for v in row {
                *v *= s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRecord {
    pub partner: Partner,
    /// Polynomial in mode-local coordinates.
    pub poly: String,
    /// Gram certificate of an SOS multiplier; absent for free-sign ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<GramRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub label: String,
    pub kind: ConditionKind,
    pub multipliers: Vec<MultiplierRecord>,
    /// Gram certificate of the whole asserted-SOS expression.
    pub gram: GramRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCertificate {
    pub id: usize,
    pub anchor: Vec<f64>,
    /// Lyapunov function in original coordinates.
    pub v: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub alpha: f64,
    pub gamma: f64,
    /// Contraction constant per mode, in system mode order.
    pub r: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub r: Vec<f64>,
    pub status: String,
    pub iterations: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub status: String,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub max_coefficient_error: f64,
    pub min_eigenvalue: f64,
    pub trace_regularization: f64,
    pub sdp_blocks: usize,
    pub sdp_rows: usize,
    pub probes: Vec<ProbeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZenoCertificate {
    pub format: String,
    pub status: CertificateStatus,
    pub system_name: String,
    pub system_fingerprint: String,
    pub request_fingerprint: String,
    pub tool_version: String,
    pub seed: u64,
    /// `standard` or `extended`.
    pub mode: String,
    pub variables: Vec<String>,
    pub parameters: Vec<String>,
    pub constants: Constants,
    pub modes: Vec<ModeCertificate>,
    pub conditions: Vec<ConditionRecord>,
    pub diagnostics: SolverDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
}

impl ZenoCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CertError> {
        let cert: ZenoCertificate = serde_json::from_str(text).map_err(|e| CertError::Format(e.to_string()))?;
        if cert.format != CERTIFICATE_FORMAT {
            return Err(CertError::Format(format!("unsupported certificate format {:?}", cert.format)));
        }
        Ok(cert)
    }

    pub fn is_valid(&self) -> bool {
        self.status == CertificateStatus::Valid && self.verification.as_ref().is_some_and(|v| v.valid)
    }

    /// Multiplies every Lyapunov, barrier and multiplier polynomial and the
    /// constants α and γ by `lambda`; all conditions are homogeneous in these.
    pub fn rescaled(&self, lambda: f64, reg: &Arc<VariableRegistry>) -> Result<ZenoCertificate, CertError> {
        let scale_text =
            |t: &str| -> Result<String, CertError> { Ok(Polynomial::parse(reg, t)?.scale(lambda).to_text()) };
        let mut out = self.clone();
        out.constants.alpha *= lambda;
        out.constants.gamma *= lambda;
        for m in &mut out.modes {
            m.v = scale_text(&m.v)?;
            if let Some(b) = &m.b {
                m.b = Some(scale_text(b)?);
            }
        }
        for c in &mut out.conditions {
            c.gram.scale(lambda);
            for mr in &mut c.multipliers {
                mr.poly = scale_text(&mr.poly)?;
                if let Some(g) = &mut mr.gram {
                    g.scale(lambda);
                }
            }
        }
        out.status = CertificateStatus::Unverified;
        out.verification = None;
        Ok(out)
    }
}
